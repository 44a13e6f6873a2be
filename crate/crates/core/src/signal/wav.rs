//! RIFF/WAVE PCM 16-bit mono reader and writer.
//!
//! Reading scales samples by 1/32768; writing inverts with saturating
//! rounding, so a write/read round trip is exact to one quantization step.

use std::fs;
use std::path::Path;

use super::{AudioBuffer, SignalError};

const SCALE: f64 = 32768.0;

pub fn read_wav(path: &Path) -> Result<AudioBuffer, SignalError> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes).map_err(|m| SignalError::Wav(format!("{}: {m}", path.display())))
}

fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err("truncated chunk".into());
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err("fmt chunk too small".into());
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or("missing fmt chunk")?;
    if format != 1 {
        return Err(format!("unsupported encoding {format}; only PCM is supported"));
    }
    if channels != 1 {
        return Err(format!("expected mono audio, got {channels} channels"));
    }
    if bits != 16 {
        return Err(format!("expected 16-bit samples, got {bits}"));
    }
    let data = data.ok_or("missing data chunk")?;
    if data.len() % 2 != 0 {
        return Err("odd data chunk length".into());
    }
    if data.is_empty() {
        return Err("empty data chunk".into());
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / SCALE)
        .collect();
    AudioBuffer::new(samples, rate).map_err(|e| e.to_string())
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<(), SignalError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let pcm: Vec<i16> = audio.samples.iter().map(|&v| quantize(v)).collect();
    fs::write(path, encode_wav(&pcm, audio.sample_rate))?;
    Ok(())
}

fn quantize(v: f64) -> i16 {
    (v * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Quantize to 16-bit and back, matching what a write/read round trip does.
pub(crate) fn quantize_round_trip(v: f64) -> f64 {
    quantize(v) as f64 / SCALE
}

fn encode_wav(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let riff_len = 4 + (8 + 16) + (8 + data_len);
    let mut out = Vec::with_capacity(8 + riff_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}
