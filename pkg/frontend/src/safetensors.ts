/**
 * Minimal safetensors reader/writer.
 *
 * Format: uint64 LE header length, JSON header mapping tensor names to
 * {dtype, shape, data_offsets:[start,end]} (offsets relative to the data
 * section), then the raw data. F32 passes through; F64/F16/BF16 decode to
 * float64 so the exporter can cast once and record it.
 */

export interface SourceTensor {
  dtype: string;
  shape: number[];
  /** decoded values, row-major */
  values: Float64Array;
}

export type Checkpoint = Map<string, SourceTensor>;

const DTYPE_BYTES: Record<string, number> = { F64: 8, F32: 4, F16: 2, BF16: 2 };

export function readSafetensors(buf: Buffer): Checkpoint {
  if (buf.length < 8) {
    throw new Error('not a safetensors file');
  }
  const headerLen = Number(buf.readBigUInt64LE(0));
  if (8 + headerLen > buf.length) {
    throw new Error('safetensors: truncated header');
  }
  let header: Record<string, any>;
  try {
    header = JSON.parse(buf.subarray(8, 8 + headerLen).toString('utf-8'));
  } catch (err) {
    throw new Error(`safetensors: bad header: ${err}`);
  }
  const data = buf.subarray(8 + headerLen);
  const out: Checkpoint = new Map();
  for (const [name, info] of Object.entries(header)) {
    if (name === '__metadata__') continue;
    const { dtype, shape, data_offsets: offsets } = info as {
      dtype: string;
      shape: number[];
      data_offsets: [number, number];
    };
    const width = DTYPE_BYTES[dtype];
    if (width === undefined) {
      throw new Error(`safetensors: unsupported dtype ${dtype} for ${name}`);
    }
    const count = shape.reduce((a, b) => a * b, 1);
    if (offsets[1] - offsets[0] !== count * width || offsets[1] > data.length) {
      throw new Error(`safetensors: bad data range for ${name}`);
    }
    const values = new Float64Array(count);
    for (let i = 0; i < count; i++) {
      const at = offsets[0] + i * width;
      if (dtype === 'F32') values[i] = data.readFloatLE(at);
      else if (dtype === 'F64') values[i] = data.readDoubleLE(at);
      else if (dtype === 'F16') values[i] = halfToNumber(data.readUInt16LE(at));
      else values[i] = bfloatToNumber(data.readUInt16LE(at));
    }
    out.set(name, { dtype, shape: [...shape], values });
  }
  return out;
}

export function writeSafetensors(
  tensors: { name: string; dtype: 'F32' | 'F64'; shape: number[]; values: ArrayLike<number> }[],
): Buffer {
  const header: Record<string, unknown> = {};
  const chunks: Buffer[] = [];
  let offset = 0;
  for (const t of tensors) {
    const width = DTYPE_BYTES[t.dtype];
    const count = t.shape.reduce((a, b) => a * b, 1);
    if (count !== t.values.length) {
      throw new Error(`${t.name}: shape disagrees with value count`);
    }
    const chunk = Buffer.alloc(count * width);
    for (let i = 0; i < count; i++) {
      if (t.dtype === 'F32') chunk.writeFloatLE(Math.fround(t.values[i]), i * 4);
      else chunk.writeDoubleLE(t.values[i], i * 8);
    }
    header[t.name] = { dtype: t.dtype, shape: t.shape, data_offsets: [offset, offset + chunk.length] };
    chunks.push(chunk);
    offset += chunk.length;
  }
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8');
  const lenBuf = Buffer.alloc(8);
  lenBuf.writeBigUInt64LE(BigInt(headerBytes.length), 0);
  return Buffer.concat([lenBuf, headerBytes, ...chunks]);
}

function halfToNumber(bits: number): number {
  const sign = (bits & 0x8000) ? -1 : 1;
  const exponent = (bits >> 10) & 0x1f;
  const fraction = bits & 0x3ff;
  if (exponent === 0) return sign * fraction * 2 ** -24;
  if (exponent === 0x1f) return fraction ? Number.NaN : sign * Number.POSITIVE_INFINITY;
  return sign * (1 + fraction / 1024) * 2 ** (exponent - 15);
}

function bfloatToNumber(bits: number): number {
  const buf = new ArrayBuffer(4);
  new DataView(buf).setUint32(0, bits << 16, false);
  return new DataView(buf).getFloat32(0, false);
}
