//! Fitted-model container: magic `OMDL`, version `u16`, mode count `u32`,
//! per-mode mean/std float32 pairs, unary calibration `(a, b)`, the energy
//! scales, visibility and pattern floor, then a CRC32 of everything before it.

use pomcrf::field::{GaussianMode, GaussianModeBank};
use pomcrf::training::UnaryCalibration;
use pomcrf::Error;

const MAGIC: &[u8; 4] = b"OMDL";
const VERSION: u16 = 1;
/// Modes accepted by the loader; matches the field container's cap.
const MAX_MODES: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub bank: GaussianModeBank<f64>,
    pub calibration: UnaryCalibration<f64>,
    pub unary_scale: f64,
    pub high_order_scale: f64,
    pub occlusion: f64,
    pub epsilon: f64,
}

fn put_f32(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn encode(model: &Model) -> Vec<u8> {
    let modes = model.bank.modes();
    let mut buf = Vec::with_capacity(10 + modes.len() * 16 + 28);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(modes.len() as u32).to_le_bytes());
    for m in modes {
        put_f32(&mut buf, m.mean[0]);
        put_f32(&mut buf, m.mean[1]);
        put_f32(&mut buf, m.std[0]);
        put_f32(&mut buf, m.std[1]);
    }
    put_f32(&mut buf, model.calibration.a);
    put_f32(&mut buf, model.calibration.b);
    put_f32(&mut buf, model.unary_scale);
    put_f32(&mut buf, model.high_order_scale);
    put_f32(&mut buf, model.occlusion);
    put_f32(&mut buf, model.epsilon);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode(bytes: &[u8]) -> pomcrf::Result<Model> {
    if bytes.len() < 10 {
        return Err(Error::Format("OMDL: truncated header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("OMDL: bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("OMDL: unsupported version {version}")));
    }
    let m = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]);
    if m == 0 || m > MAX_MODES {
        return Err(Error::Format("OMDL: invalid mode count".into()));
    }
    let expected = 10 + m as usize * 16 + 6 * 4 + 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "OMDL: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let crc_stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    if crc32fast::hash(&bytes[..expected - 4]) != crc_stored {
        return Err(Error::Format("OMDL: checksum mismatch".into()));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let mut modes = Vec::with_capacity(m as usize);
    for i in 0..m as usize {
        let o = 10 + i * 16;
        modes.push(GaussianMode {
            mean: [f(o), f(o + 4)],
            std: [f(o + 8), f(o + 12)],
        });
    }
    let tail = 10 + m as usize * 16;
    Ok(Model {
        bank: GaussianModeBank::new(modes)?,
        calibration: UnaryCalibration { a: f(tail), b: f(tail + 4) },
        unary_scale: f(tail + 8),
        high_order_scale: f(tail + 12),
        occlusion: f(tail + 16),
        epsilon: f(tail + 20),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Model {
        Model {
            bank: GaussianModeBank::body_grid(2, 4).unwrap(),
            calibration: UnaryCalibration { a: 1.25, b: -0.5 },
            unary_scale: 1.0,
            high_order_scale: 0.1,
            occlusion: 0.9,
            epsilon: 1e-6,
        }
    }

    #[test]
    fn roundtrip_preserves_single_precision() {
        let model = sample();
        let bytes = encode(&model);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.bank.len(), model.bank.len());
        for (a, b) in back.bank.modes().iter().zip(model.bank.modes()) {
            for k in 0..2 {
                assert_eq!(a.mean[k], b.mean[k] as f32 as f64);
                assert_eq!(a.std[k], b.std[k] as f32 as f64);
            }
        }
        assert_eq!(back.calibration.a, 1.25);
        assert_eq!(back.calibration.b, -0.5);
        assert_eq!(back.occlusion, 0.9 as f32 as f64);
        // Encoding is a pure function of the model.
        assert_eq!(bytes, encode(&model));
    }

    #[test]
    fn corruption_is_rejected() {
        let mut bytes = encode(&sample());
        assert!(matches!(decode(&bytes[..9]), Err(Error::Format(_))));
        bytes[20] ^= 0xff;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bad_magic = encode(&sample());
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::Format(_))));
        let mut truncated = encode(&sample());
        truncated.pop();
        assert!(matches!(decode(&truncated), Err(Error::Format(_))));
    }
}
