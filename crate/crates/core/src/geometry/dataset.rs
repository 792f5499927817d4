//! JSON-lines dataset files, one [`MultiViewSample`] per line.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::Formatter;

use super::MultiViewSample;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Writes floats as decimal scientific notation with 17 significant digits
/// (9 for `f32`), which round-trips every finite value exactly.
struct SigDigitsFormatter;

impl Formatter for SigDigitsFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:.8e}")
    }
}

pub fn write_sample<T: Serialize, W: Write>(sample: &MultiViewSample<T>, mut out: W) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigitsFormatter);
    sample.serialize(&mut ser).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_dataset<T: Serialize, W: Write>(samples: &[MultiViewSample<T>], mut out: W) -> Result<()> {
    for s in samples {
        write_sample(s, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<MultiViewSample<T>>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: MultiViewSample<T> =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        if sample.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "line {}: unsupported schema_version {}",
                lineno + 1,
                sample.schema_version
            )));
        }
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{render_views, synth_motion, CameraPose, MotionKind, NoiseSpec};
    use proptest::prelude::*;

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let clip = synth_motion::<f64>(MotionKind::Mixed, 10, 3);
        let cams = [CameraPose::orbit(0.3, 0.1), CameraPose::orbit(2.0, -0.2)];
        let noise = NoiseSpec { sigma_px: 1.5, occlusion_prob: 0.2 };
        let sample = render_views(&clip, &cams, noise, 4).unwrap();
        let mut buf = Vec::new();
        write_dataset(std::slice::from_ref(&sample), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"schema_version\":1"));
        let back: Vec<MultiViewSample<f64>> = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back[0], sample);
    }

    #[test]
    fn rejects_unknown_schema_version() {
        let clip = synth_motion::<f64>(MotionKind::Walk, 2, 3);
        let mut sample = render_views(&clip, &[CameraPose::orbit(0.0, 0.0)], NoiseSpec::CLEAN, 1).unwrap();
        sample.schema_version = 2;
        let mut buf = Vec::new();
        write_sample(&sample, &mut buf).unwrap();
        assert!(matches!(read_dataset::<f64, _>(buf.as_slice()), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn seventeen_digit_floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let mut buf = Vec::new();
            let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigitsFormatter);
            x.serialize(&mut ser).unwrap();
            let back: f64 = serde_json::from_slice(&buf).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
