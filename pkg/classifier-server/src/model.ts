/**
 * Prediction models served over the wire protocol.
 *
 * A model maps a raw row-major RGB8 buffer to a probability vector. The
 * reference model is a pure function so its outputs are bit-reproducible:
 * p1 = 1 / (1 + exp(-10 * (f - 0.2))) where f is the fraction of pixels in
 * the central 32x32 region whose green channel exceeds both red and blue by
 * at least 30. Wrap any real model by implementing ServerModel.
 */

export interface ServerModel {
  name: string;
  classCount: number;
  predict(raw: Uint8Array, width: number, height: number): number[];
}

const REGION = 32;
const MARGIN = 30;
const GAIN = 10.0;
const OFFSET = 0.2;

export function referenceModel(): ServerModel {
  return {
    name: 'reference-green-blob',
    classCount: 2,
    predict(raw: Uint8Array, width: number, height: number): number[] {
      const x0 = Math.max(0, Math.floor((width - REGION) / 2));
      const y0 = Math.max(0, Math.floor((height - REGION) / 2));
      const x1 = Math.min(width, x0 + REGION);
      const y1 = Math.min(height, y0 + REGION);
      let match = 0;
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) {
          const i = (y * width + x) * 3;
          const g = raw[i + 1];
          if (g - raw[i] >= MARGIN && g - raw[i + 2] >= MARGIN) {
            match++;
          }
        }
      }
      const f = match / ((x1 - x0) * (y1 - y0));
      const p1 = 1.0 / (1.0 + Math.exp(-GAIN * (f - OFFSET)));
      return [1.0 - p1, p1];
    },
  };
}
