//! Minimal FLAC codec for mono 16-bit streams: fixed-predictor subframes
//! with a single Rice partition. Enough for a bit-exact lossless round trip
//! through a real FLAC container.

use crate::error::{Error, Result};

const BLOCK: usize = 4096;
const MAX_RICE: u32 = 14;

fn crc8(data: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &b in data {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ 0x07 } else { crc << 1 };
        }
    }
    crc
}

fn crc16(data: &[u8]) -> u16 {
    let mut crc = 0u16;
    for &b in data {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x8005
            } else {
                crc << 1
            };
        }
    }
    crc
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    n: u32,
}

impl BitWriter {
    fn put(&mut self, value: u64, bits: u32) {
        for i in (0..bits).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1);
            self.n += 1;
            if self.n == 8 {
                self.bytes.push(self.acc as u8);
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    fn put_signed(&mut self, value: i64, bits: u32) {
        self.put((value as u64) & ((1u64 << bits) - 1), bits);
    }

    fn unary(&mut self, q: u64) {
        for _ in 0..q {
            self.put(0, 1);
        }
        self.put(1, 1);
    }

    fn align(&mut self) {
        while self.n != 0 {
            self.put(0, 1);
        }
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn get(&mut self, bits: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..bits {
            let byte = *self
                .data
                .get(self.pos / 8)
                .ok_or_else(|| Error::Format("flac: truncated stream".into()))?;
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        Ok(v)
    }

    fn get_signed(&mut self, bits: u32) -> Result<i64> {
        let v = self.get(bits)?;
        let shift = 64 - bits;
        Ok(((v << shift) as i64) >> shift)
    }

    fn unary(&mut self) -> Result<u64> {
        let mut q = 0;
        while self.get(1)? == 0 {
            q += 1;
        }
        Ok(q)
    }

    fn align(&mut self) {
        self.pos = self.pos.div_ceil(8) * 8;
    }

    fn byte_pos(&self) -> usize {
        self.pos / 8
    }
}

fn utf8_number(n: u64) -> Vec<u8> {
    if n < 0x80 {
        return vec![n as u8];
    }
    let mut tail = Vec::new();
    let mut v = n;
    let mut lead_bits = 6u32;
    loop {
        tail.push(0x80 | (v & 0x3f) as u8);
        v >>= 6;
        lead_bits -= 1;
        if v < (1 << lead_bits) {
            break;
        }
    }
    let count = tail.len() + 1;
    let prefix = !(0xffu8 >> count);
    let mut out = vec![prefix | v as u8];
    out.extend(tail.iter().rev());
    out
}

fn read_utf8_number(r: &mut BitReader) -> Result<u64> {
    let first = r.get(8)? as u8;
    let extra = first.leading_ones() as usize;
    if extra == 0 {
        return Ok(first as u64);
    }
    if extra == 1 || extra > 7 {
        return Err(Error::Format("flac: bad frame number".into()));
    }
    let mut v = (first & (0x7f >> extra)) as u64;
    for _ in 1..extra {
        let b = r.get(8)? as u8;
        if b & 0xc0 != 0x80 {
            return Err(Error::Format("flac: bad frame number".into()));
        }
        v = (v << 6) | (b & 0x3f) as u64;
    }
    Ok(v)
}

fn fixed_residual(x: &[i64], order: usize) -> Vec<i64> {
    (order..x.len())
        .map(|n| match order {
            0 => x[n],
            1 => x[n] - x[n - 1],
            2 => x[n] - 2 * x[n - 1] + x[n - 2],
            3 => x[n] - 3 * x[n - 1] + 3 * x[n - 2] - x[n - 3],
            _ => x[n] - 4 * x[n - 1] + 6 * x[n - 2] - 4 * x[n - 3] + x[n - 4],
        })
        .collect()
}

fn fixed_predict(x: &[i64], n: usize, order: usize) -> i64 {
    match order {
        0 => 0,
        1 => x[n - 1],
        2 => 2 * x[n - 1] - x[n - 2],
        3 => 3 * x[n - 1] - 3 * x[n - 2] + x[n - 3],
        _ => 4 * x[n - 1] - 6 * x[n - 2] + 4 * x[n - 3] - x[n - 4],
    }
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

fn rice_param(res: &[i64]) -> u32 {
    if res.is_empty() {
        return 0;
    }
    let mean = res.iter().map(|&r| zigzag(r)).sum::<u64>() / res.len() as u64;
    if mean == 0 {
        0
    } else {
        (63 - mean.leading_zeros()).min(MAX_RICE)
    }
}

fn encode_frame(block: &[i16], frame_no: u64) -> Vec<u8> {
    let mut w = BitWriter::default();
    w.put(0b11111111111110, 14);
    w.put(0, 1); // reserved
    w.put(0, 1); // fixed blocking
    let full = block.len() == BLOCK;
    w.put(if full { 0b1100 } else { 0b0111 }, 4);
    w.put(0b0000, 4); // rate from STREAMINFO
    w.put(0b0000, 4); // mono
    w.put(0b100, 3); // 16 bits per sample
    w.put(0, 1);
    for b in utf8_number(frame_no) {
        w.put(b as u64, 8);
    }
    if !full {
        w.put((block.len() - 1) as u64, 16);
    }
    let crc = crc8(&w.bytes);
    w.put(crc as u64, 8);

    let x: Vec<i64> = block.iter().map(|&s| s as i64).collect();
    let max_order = 4.min(x.len().saturating_sub(1));
    let (order, res) = (0..=max_order)
        .map(|o| {
            let r = fixed_residual(&x, o);
            (o, r)
        })
        .min_by_key(|(_, r)| r.iter().map(|v| v.unsigned_abs()).sum::<u64>())
        .unwrap();
    w.put(0, 1);
    w.put(0b001000 | order as u64, 6);
    w.put(0, 1); // no wasted bits
    for &s in &x[..order] {
        w.put_signed(s, 16);
    }
    let k = rice_param(&res);
    w.put(0b00, 2); // 4-bit rice parameters
    w.put(0, 4); // partition order 0
    w.put(k as u64, 4);
    for &r in &res {
        let u = zigzag(r);
        w.unary(u >> k);
        if k > 0 {
            w.put(u & ((1 << k) - 1), k);
        }
    }
    w.align();
    let crc = crc16(&w.bytes);
    w.put(crc as u64, 16);
    w.bytes
}

/// Encodes mono 16-bit samples.
pub fn encode(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let mut out = b"fLaC".to_vec();
    let mut info = BitWriter::default();
    info.put(1, 1); // last metadata block
    info.put(0, 7); // STREAMINFO
    info.put(34, 24);
    let min_block = if samples.len() < BLOCK {
        samples.len().max(1)
    } else {
        BLOCK
    };
    info.put(min_block as u64, 16);
    info.put(BLOCK as u64, 16);
    info.put(0, 24);
    info.put(0, 24);
    info.put(sample_rate as u64, 20);
    info.put(0, 3); // channels - 1
    info.put(15, 5); // bits per sample - 1
    info.put(samples.len() as u64, 36);
    for _ in 0..16 {
        info.put(0, 8); // MD5 unknown
    }
    out.extend(info.bytes);
    for (i, block) in samples.chunks(BLOCK).enumerate() {
        out.extend(encode_frame(block, i as u64));
    }
    out
}

/// Decodes the subset written by [`encode`]; returns samples and rate.
pub fn decode(bytes: &[u8]) -> Result<(Vec<i16>, u32)> {
    if bytes.len() < 42 || &bytes[..4] != b"fLaC" {
        return Err(Error::Format("flac: missing stream marker".into()));
    }
    let mut r = BitReader { data: bytes, pos: 32 };
    let mut rate = 0u32;
    let mut total = 0u64;
    loop {
        let last = r.get(1)? == 1;
        let kind = r.get(7)?;
        let len = r.get(24)? as usize;
        if kind == 0 {
            r.get(16)?;
            r.get(16)?;
            r.get(24)?;
            r.get(24)?;
            rate = r.get(20)? as u32;
            let channels = r.get(3)? + 1;
            let bps = r.get(5)? + 1;
            total = r.get(36)?;
            r.get(64)?;
            r.get(64)?;
            if channels != 1 || bps != 16 {
                return Err(Error::Format("flac: only mono 16-bit streams are supported".into()));
            }
        } else {
            r.pos += len * 8;
        }
        if last {
            break;
        }
    }
    let mut samples: Vec<i16> = Vec::with_capacity(total as usize);
    while (samples.len() as u64) < total {
        let start = r.byte_pos();
        if r.get(14)? != 0b11111111111110 {
            return Err(Error::Format("flac: lost frame sync".into()));
        }
        r.get(2)?;
        let bs_code = r.get(4)?;
        r.get(4)?;
        r.get(4)?;
        r.get(3)?;
        r.get(1)?;
        read_utf8_number(&mut r)?;
        let block = match bs_code {
            0b1100 => BLOCK,
            0b0110 => r.get(8)? as usize + 1,
            0b0111 => r.get(16)? as usize + 1,
            c => return Err(Error::Format(format!("flac: unsupported block size code {c}"))),
        };
        let header_end = r.byte_pos();
        let crc = r.get(8)? as u8;
        if crc8(&bytes[start..header_end]) != crc {
            return Err(Error::Integrity("flac: frame header CRC mismatch".into()));
        }
        r.get(1)?;
        let sub = r.get(6)?;
        if r.get(1)? != 0 {
            return Err(Error::Format("flac: wasted bits unsupported".into()));
        }
        let mut x: Vec<i64> = Vec::with_capacity(block);
        match sub {
            0 => {
                let v = r.get_signed(16)?;
                x.resize(block, v);
            }
            1 => {
                for _ in 0..block {
                    x.push(r.get_signed(16)?);
                }
            }
            8..=12 => {
                let order = (sub - 8) as usize;
                for _ in 0..order {
                    x.push(r.get_signed(16)?);
                }
                if r.get(2)? != 0 {
                    return Err(Error::Format("flac: unsupported residual coding".into()));
                }
                if r.get(4)? != 0 {
                    return Err(Error::Format("flac: partitioned residual unsupported".into()));
                }
                let k = r.get(4)? as u32;
                for n in order..block {
                    let q = r.unary()?;
                    let rem = if k > 0 { r.get(k)? } else { 0 };
                    let res = unzigzag((q << k) | rem);
                    x.push(fixed_predict(&x, n, order) + res);
                }
            }
            s => return Err(Error::Format(format!("flac: unsupported subframe type {s}"))),
        }
        r.align();
        let frame_end = r.byte_pos();
        let crc = r.get(16)? as u16;
        if crc16(&bytes[start..frame_end]) != crc {
            return Err(Error::Integrity("flac: frame CRC mismatch".into()));
        }
        for v in x {
            samples.push(i16::try_from(v).map_err(|_| Error::Integrity("flac: sample overflow".into()))?);
        }
    }
    Ok((samples, rate))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn utf8_numbers() {
        assert_eq!(utf8_number(0x7f), vec![0x7f]);
        assert_eq!(utf8_number(0x80), vec![0xc2, 0x80]);
        assert_eq!(utf8_number(0x800), vec![0xe0, 0xa0, 0x80]);
        for n in [0u64, 5, 127, 128, 2047, 2048, 65_535, 65_536, 1 << 20] {
            let bytes = utf8_number(n);
            let mut r = BitReader { data: &bytes, pos: 0 };
            assert_eq!(read_utf8_number(&mut r).unwrap(), n);
        }
    }

    #[test]
    fn corrupt_frame_is_detected() {
        let x: Vec<i16> = (0..5000).map(|i| ((i * 37) % 2000) as i16 - 1000).collect();
        let mut bytes = encode(&x, 16_000);
        let n = bytes.len();
        bytes[n - 10] ^= 0x55;
        assert!(decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(x in proptest::collection::vec(any::<i16>(), 1..9000)) {
            let (y, rate) = decode(&encode(&x, 16_000)).unwrap();
            prop_assert_eq!(rate, 16_000);
            prop_assert_eq!(y, x);
        }
    }
}
