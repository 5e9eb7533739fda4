/**
 * TOAST archive read/write.
 *
 * Byte layout (integers little-endian regardless of host):
 *   bytes 0..5   magic "TOAST1"
 *   bytes 6..9   uint32 manifest length M
 *   10..10+M     UTF-8 JSON manifest {format_version, entries[, metadata]}
 *   remainder    raw float32 row-major payload in manifest order
 *
 * Entry offsets are relative to the payload start, contiguous and strictly
 * increasing. Writing is fully deterministic: the same tensors produce the
 * same bytes.
 */

const MAGIC = Buffer.from('TOAST1', 'ascii');
const FORMAT_VERSION = 1;

export interface ToastTensor {
  name: string;
  dims: number[];
  data: Float32Array;
}

export function writeToast(tensors: ToastTensor[], metadata?: Record<string, unknown>): Buffer {
  const entries: { name: string; dims: number[]; byte_offset: number }[] = [];
  const chunks: Buffer[] = [];
  const seen = new Set<string>();
  let offset = 0;
  for (const t of tensors) {
    if (seen.has(t.name)) {
      throw new Error(`duplicate tensor name: ${t.name}`);
    }
    seen.add(t.name);
    const count = t.dims.reduce((a, b) => a * b, 1);
    if (count !== t.data.length) {
      throw new Error(`${t.name}: dims ${JSON.stringify(t.dims)} disagree with ${t.data.length} values`);
    }
    for (const v of t.data) {
      if (!Number.isFinite(v)) {
        throw new Error(`${t.name}: contains NaN or Inf`);
      }
    }
    const chunk = Buffer.alloc(4 * count);
    for (let i = 0; i < count; i++) {
      chunk.writeFloatLE(t.data[i], 4 * i);
    }
    entries.push({ name: t.name, dims: [...t.dims], byte_offset: offset });
    chunks.push(chunk);
    offset += chunk.length;
  }
  const manifest: Record<string, unknown> = { format_version: FORMAT_VERSION, entries };
  if (metadata !== undefined) {
    manifest.metadata = metadata;
  }
  const manifestBytes = Buffer.from(JSON.stringify(manifest), 'utf-8');
  const header = Buffer.alloc(4);
  header.writeUInt32LE(manifestBytes.length, 0);
  return Buffer.concat([MAGIC, header, manifestBytes, ...chunks]);
}

export function readToast(buf: Buffer): { tensors: ToastTensor[]; manifest: Record<string, unknown> } {
  if (buf.length < 10 || !buf.subarray(0, 6).equals(MAGIC)) {
    throw new Error('not a TOAST archive');
  }
  const manifestLen = buf.readUInt32LE(6);
  if (10 + manifestLen > buf.length) {
    throw new Error('truncated');
  }
  let manifest: any;
  try {
    manifest = JSON.parse(buf.subarray(10, 10 + manifestLen).toString('utf-8'));
  } catch (err) {
    throw new Error(`bad manifest: ${err}`);
  }
  if (manifest.format_version !== FORMAT_VERSION || !Array.isArray(manifest.entries)) {
    throw new Error('bad manifest: wrong version or missing entries');
  }
  const payload = buf.subarray(10 + manifestLen);
  const tensors: ToastTensor[] = [];
  let expected = 0;
  for (const entry of manifest.entries) {
    if (entry.byte_offset !== expected) {
      throw new Error(`bad manifest: non-contiguous offset for ${entry.name}`);
    }
    const count = (entry.dims as number[]).reduce((a: number, b: number) => a * b, 1);
    const end = entry.byte_offset + 4 * count;
    if (end > payload.length) {
      throw new Error('truncated');
    }
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = payload.readFloatLE(entry.byte_offset + 4 * i);
    }
    tensors.push({ name: entry.name, dims: [...entry.dims], data });
    expected = end;
  }
  if (payload.length !== expected) {
    throw new Error(`trailing data: ${payload.length - expected} unexpected bytes`);
  }
  return { tensors, manifest };
}
