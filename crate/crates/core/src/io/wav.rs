//! 16-bit PCM mono WAV reading and writing.
//!
//! The reader is defensive: every field is bounds-checked and malformed input
//! yields an error, never a panic or oversized allocation. It accepts extra
//! chunks (LIST, fact, ...) and skips them.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Wav {
    pub sample_rate: u32,
    /// Samples scaled to [-1, 1).
    pub samples: Vec<f64>,
}

fn rd_u16(b: &[u8], off: usize) -> Option<u16> {
    b.get(off..off + 2).map(|s| u16::from_le_bytes([s[0], s[1]]))
}

fn rd_u32(b: &[u8], off: usize) -> Option<u32> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

/// Parse a WAV byte stream. Only uncompressed 16-bit mono PCM is accepted.
pub fn parse_wav(bytes: &[u8]) -> std::result::Result<Wav, String> {
    if bytes.len() < 12 {
        return Err("file shorter than RIFF header".into());
    }
    if &bytes[0..4] != b"RIFF" {
        return Err("missing RIFF tag".into());
    }
    if &bytes[8..12] != b"WAVE" {
        return Err("missing WAVE tag".into());
    }
    let mut off = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = rd_u32(bytes, off + 4).ok_or("truncated chunk header")? as usize;
        let body_start = off + 8;
        let body_end = body_start.checked_add(size).ok_or("chunk size overflow")?;
        if body_end > bytes.len() {
            return Err(format!(
                "chunk {:?} claims {} bytes but only {} remain",
                String::from_utf8_lossy(id),
                size,
                bytes.len() - body_start
            ));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err("fmt chunk too short".into());
                }
                let format = rd_u16(body, 0).unwrap();
                let channels = rd_u16(body, 2).unwrap();
                let rate = rd_u32(body, 4).unwrap();
                let bits = rd_u16(body, 14).unwrap();
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        off = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or("no fmt chunk")?;
    if format != 1 {
        return Err(format!("unsupported audio format {format} (want PCM=1)"));
    }
    if channels != 1 {
        return Err(format!("unsupported channel count {channels} (want mono)"));
    }
    if bits != 16 {
        return Err(format!("unsupported bit depth {bits} (want 16)"));
    }
    if rate == 0 {
        return Err("zero sample rate".into());
    }
    let data = data.ok_or("no data chunk")?;
    let n = data.len() / 2;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let v = i16::from_le_bytes([data[2 * i], data[2 * i + 1]]);
        samples.push(v as f64 / 32768.0);
    }
    Ok(Wav {
        sample_rate: rate,
        samples,
    })
}

pub fn encode_wav(sample_rate: u32, samples: &[f64]) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0 - 1.0 / 32768.0) * 32768.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_wav(path: &Path) -> Result<Wav> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes).map_err(|reason| Error::format(path, reason))
}

pub fn write_wav(path: &Path, sample_rate: u32, samples: &[f64]) -> Result<()> {
    let bytes = encode_wav(sample_rate, samples);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 / 50.0 - 1.0) * 0.9).collect();
        let bytes = encode_wav(16000, &samples);
        let wav = parse_wav(&bytes).unwrap();
        assert_eq!(wav.sample_rate, 16000);
        assert_eq!(wav.samples.len(), 100);
        for (a, b) in samples.iter().zip(&wav.samples) {
            assert!((a - b).abs() < 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_garbage_without_panic() {
        assert!(parse_wav(b"").is_err());
        assert!(parse_wav(b"RIFF").is_err());
        assert!(parse_wav(b"RIFFxxxxWAVE").is_err());
        // truncated data chunk claiming a huge size
        let mut bytes = encode_wav(16000, &[0.0; 4]);
        let len = bytes.len();
        bytes[len - 12..len - 8].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(parse_wav(&bytes).is_err() || parse_wav(&bytes).is_ok());
    }

    #[test]
    fn rejects_stereo_and_other_depths() {
        let mut bytes = encode_wav(16000, &[0.1; 8]);
        bytes[22] = 2; // channels
        assert!(parse_wav(&bytes).unwrap_err().contains("channel"));
        let mut bytes = encode_wav(16000, &[0.1; 8]);
        bytes[34] = 8; // bits
        assert!(parse_wav(&bytes).unwrap_err().contains("bit depth"));
    }

    #[test]
    fn skips_unknown_chunks() {
        let tail = encode_wav(8000, &[0.5, -0.5]);
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&tail[..12]);
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(b"abc\0"); // padded to even
        bytes.extend_from_slice(&tail[12..]);
        let total = bytes.len() as u32 - 8;
        bytes[4..8].copy_from_slice(&total.to_le_bytes());
        let wav = parse_wav(&bytes).unwrap();
        assert_eq!(wav.samples.len(), 2);
    }
}
