// Decoder for the server's base64-encoded binary PPM (P6, 8-bit) images.

export interface RgbImage {
  width: number;
  height: number;
  pixels: Uint8ClampedArray; // RGBA, canvas-ready
}

export function decodeBase64(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  // node (vitest) path
  const buf = (globalThis as { Buffer?: { from(s: string, enc: string): Uint8Array } }).Buffer;
  if (!buf) throw new Error("no base64 decoder available");
  return Uint8Array.from(buf.from(b64, "base64"));
}

export function parsePpm(bytes: Uint8Array): RgbImage {
  if (bytes[0] !== 0x50 || bytes[1] !== 0x36) {
    throw new Error("not a P6 PPM image");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < bytes.length && isSpace(bytes[pos])) pos++;
    if (bytes[pos] === 0x23) { // '#' comment
      while (bytes[pos] !== 0x0a) pos++;
      continue;
    }
    let value = 0;
    while (pos < bytes.length && !isSpace(bytes[pos])) {
      value = value * 10 + (bytes[pos] - 0x30);
      pos++;
    }
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  const pixels = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    pixels[i * 4] = bytes[pos + i * 3];
    pixels[i * 4 + 1] = bytes[pos + i * 3 + 1];
    pixels[i * 4 + 2] = bytes[pos + i * 3 + 2];
    pixels[i * 4 + 3] = 255;
  }
  return { width, height, pixels };
}

export function decodeScenePpm(b64: string): RgbImage {
  return parsePpm(decodeBase64(b64));
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}
