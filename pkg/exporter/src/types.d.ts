// optional pretrained backend; typed loosely because it may be absent
declare module '@xenova/transformers';
