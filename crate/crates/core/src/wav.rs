//! Mono WAV persistence.

use std::path::Path;

use hound::{SampleFormat, WavSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    #[default]
    Float32,
    Pcm16,
}

impl WavEncoding {
    /// Round samples to what this encoding stores, so in-memory signals equal
    /// what a later read returns.
    pub fn quantize(self, w: &Waveform) -> Waveform {
        let samples = w
            .samples()
            .iter()
            .map(|&s| match self {
                WavEncoding::Float32 => f64::from(s as f32),
                WavEncoding::Pcm16 => f64::from(pcm16(s)) / 32768.0,
            })
            .collect();
        Waveform::new(samples, w.sample_rate()).expect("quantized samples stay finite")
    }
}

fn pcm16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn format_err(path: &Path, e: hound::Error) -> TseError {
    match e {
        hound::Error::IoError(io) => TseError::io(path, io),
        other => TseError::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let spec = match encoding {
        WavEncoding::Float32 => WavSpec {
            channels: 1,
            sample_rate: w.sample_rate(),
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
        WavEncoding::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: w.sample_rate(),
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| format_err(path, e))?;
    for &s in w.samples() {
        match encoding {
            WavEncoding::Float32 => writer.write_sample(s as f32),
            WavEncoding::Pcm16 => writer.write_sample(pcm16(s)),
        }
        .map_err(|e| format_err(path, e))?;
    }
    writer.finalize().map_err(|e| format_err(path, e))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| format_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(TseError::Format {
            path: path.to_path_buf(),
            message: format!("expected mono, found {} channels", spec.channels),
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(TseError::Format {
                path: path.to_path_buf(),
                message: format!("unsupported encoding {fmt:?} {bits}-bit"),
            })
        }
    }
    .map_err(|e| format_err(path, e))?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| TseError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.5, -0.5], 8000).unwrap();
        write_wav(&p, &w, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);
    }

    #[test]
    fn pcm16_within_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let w = Waveform::new(vec![1.0, -1.0, 0.3, 0.0], 16000).unwrap();
        write_wav(&p, &w, WavEncoding::Pcm16).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate(), 16000);
        for (a, b) in w.samples().iter().zip(r.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..4 {
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(TseError::Format { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_wav("/nonexistent/x.wav"), Err(TseError::Io { .. })));
    }
}
