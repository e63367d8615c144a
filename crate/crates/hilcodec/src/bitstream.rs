//! Self-describing packed container for RVQ code indices.
//!
//! Layout: a 17-byte header (magic `HILC`, version, little-endian integers)
//! followed by the indices bit-packed MSB-first, frame-major then
//! stage-major, with the final byte zero-padded. No entropy coding: the
//! payload bitrate is exactly `sample_rate / hop * nq * codebook_bits`.

use crate::error::{Error, Result};
use crate::quantizer::CodeFrame;

pub const MAGIC: [u8; 4] = *b"HILC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub sample_rate: u32,
    pub hop: u16,
    pub codebook_bits: u8,
    pub nq: u8,
    pub num_frames: u32,
}

impl BitstreamHeader {
    pub fn validate(&self) -> Result<()> {
        if self.codebook_bits < 1 || self.codebook_bits > 16 {
            return Err(Error::format(format!("codebook_bits {} outside 1..=16", self.codebook_bits)));
        }
        if self.nq < 1 {
            return Err(Error::format("nq must be at least 1"));
        }
        if self.hop == 0 {
            return Err(Error::format("hop must be positive"));
        }
        Ok(())
    }

    /// Decoded sample count: hop × frames.
    pub fn sample_count(&self) -> usize {
        self.hop as usize * self.num_frames as usize
    }

    /// Declared payload bitrate in bits per second.
    pub fn bitrate_bps(&self) -> u64 {
        self.sample_rate as u64 / self.hop as u64 * self.nq as u64 * self.codebook_bits as u64
    }

    pub fn payload_bits(&self) -> usize {
        self.num_frames as usize * self.nq as usize * self.codebook_bits as usize
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    bit_pos: u8,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter { bytes: Vec::new(), bit_pos: 0 }
    }

    /// Append `bits` low bits of `value`, most significant first.
    fn write(&mut self, value: u16, bits: u8) {
        for i in (0..bits).rev() {
            let bit = (value >> i) & 1;
            if self.bit_pos == 0 {
                self.bytes.push(0);
            }
            let last = self.bytes.last_mut().unwrap();
            *last |= (bit as u8) << (7 - self.bit_pos);
            self.bit_pos = (self.bit_pos + 1) % 8;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos_bits: usize,
}

impl<'a> BitReader<'a> {
    fn read(&mut self, bits: u8) -> Option<u16> {
        let mut v = 0u16;
        for _ in 0..bits {
            let byte = self.pos_bits / 8;
            if byte >= self.bytes.len() {
                return None;
            }
            let bit = (self.bytes[byte] >> (7 - (self.pos_bits % 8))) & 1;
            v = (v << 1) | bit as u16;
            self.pos_bits += 1;
        }
        Some(v)
    }
}

/// Pack code frames behind a self-describing header.
pub fn pack(frames: &[CodeFrame], sample_rate: u32, hop: u16, codebook_bits: u8, nq: u8) -> Result<Vec<u8>> {
    let header = BitstreamHeader {
        sample_rate,
        hop,
        codebook_bits,
        nq,
        num_frames: frames.len() as u32,
    };
    header.validate()?;
    let limit = if codebook_bits >= 16 { u16::MAX as u32 + 1 } else { 1u32 << codebook_bits };
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_bits() / 8 + 1);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&hop.to_le_bytes());
    out.push(codebook_bits);
    out.push(nq);
    out.extend_from_slice(&header.num_frames.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);

    let mut writer = BitWriter::new();
    for (i, frame) in frames.iter().enumerate() {
        if frame.indices.len() != nq as usize {
            return Err(Error::format(format!(
                "frame {i} has {} stages, header says {nq}",
                frame.indices.len()
            )));
        }
        for &idx in &frame.indices {
            if (idx as u32) >= limit {
                return Err(Error::format(format!("index {idx} does not fit in {codebook_bits} bits")));
            }
            writer.write(idx, codebook_bits);
        }
    }
    out.extend_from_slice(&writer.bytes);
    Ok(out)
}

/// Inverse of [`pack`]; `unpack(pack(f)) == f` for all valid inputs.
pub fn unpack(bytes: &[u8]) -> Result<(BitstreamHeader, Vec<CodeFrame>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptStream { offset: bytes.len(), msg: "truncated header".into() });
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::format("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(format!("unsupported version {}", bytes[4])));
    }
    let header = BitstreamHeader {
        sample_rate: u32::from_le_bytes(bytes[5..9].try_into().unwrap()),
        hop: u16::from_le_bytes(bytes[9..11].try_into().unwrap()),
        codebook_bits: bytes[11],
        nq: bytes[12],
        num_frames: u32::from_le_bytes(bytes[13..17].try_into().unwrap()),
    };
    header.validate()?;
    let need_bits = header.payload_bits();
    let have_bits = (bytes.len() - HEADER_LEN) * 8;
    if have_bits < need_bits {
        // report the byte offset where data ran out
        return Err(Error::CorruptStream {
            offset: bytes.len(),
            msg: format!("payload needs {} bits, found {}", need_bits, have_bits),
        });
    }
    let mut reader = BitReader { bytes: &bytes[HEADER_LEN..], pos_bits: 0 };
    let mut frames = Vec::with_capacity(header.num_frames as usize);
    for _ in 0..header.num_frames {
        let mut indices = Vec::with_capacity(header.nq as usize);
        for _ in 0..header.nq {
            indices.push(reader.read(header.codebook_bits).expect("length checked above"));
        }
        frames.push(CodeFrame { indices });
    }
    Ok((header, frames))
}
