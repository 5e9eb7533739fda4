import { describe, expect, it } from 'vitest';

import { readSafetensors, writeSafetensors } from '../src/safetensors.js';

describe('safetensors io', () => {
  it('round-trips F32 values exactly', () => {
    const values = [1.5, -0.25, 3.75, 0];
    const buf = writeSafetensors([{ name: 'w', dtype: 'F32', shape: [2, 2], values }]);
    const back = readSafetensors(buf);
    expect(Array.from(back.get('w')!.values)).toEqual(values);
    expect(back.get('w')!.dtype).toBe('F32');
    expect(back.get('w')!.shape).toEqual([2, 2]);
  });

  it('decodes F64 tensors', () => {
    const buf = writeSafetensors([{ name: 'w', dtype: 'F64', shape: [3], values: [1.1, 2.2, 3.3] }]);
    const back = readSafetensors(buf);
    expect(back.get('w')!.dtype).toBe('F64');
    expect(Array.from(back.get('w')!.values)).toEqual([1.1, 2.2, 3.3]);
  });

  it('rejects malformed headers', () => {
    expect(() => readSafetensors(Buffer.from('tiny'))).toThrow('not a safetensors file');
    const lenBuf = Buffer.alloc(8);
    lenBuf.writeBigUInt64LE(5n, 0);
    expect(() => readSafetensors(Buffer.concat([lenBuf, Buffer.from('{bad}')]))).toThrow('bad header');
  });

  it('rejects inconsistent data ranges', () => {
    const header = Buffer.from(
      JSON.stringify({ w: { dtype: 'F32', shape: [4], data_offsets: [0, 8] } }),
      'utf-8',
    );
    const lenBuf = Buffer.alloc(8);
    lenBuf.writeBigUInt64LE(BigInt(header.length), 0);
    expect(() => readSafetensors(Buffer.concat([lenBuf, header, Buffer.alloc(8)]))).toThrow(
      'bad data range',
    );
  });
});
