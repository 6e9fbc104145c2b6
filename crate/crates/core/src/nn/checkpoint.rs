//! Binary model checkpoints: magic `BLSM`, format version, config fields,
//! then every parameter as a little-endian f64 in declaration order.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::config::{ModelConfig, Regularizer};
use super::model::BiLstmModel;
use super::params::Params;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BLSM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(model: &BiLstmModel<T>) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(64 + 8 * model.params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        c.input_channels as u32,
        c.window_len as u32,
        c.n_layers as u32,
        c.hidden_units as u32,
        c.kernel_reg.code(),
        c.recurrent_reg.code(),
        c.n_classes as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [c.dropout, c.l1, c.l2] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (_, t) in model.params.tensors() {
        for w in t {
            out.extend_from_slice(&w.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<BiLstmModel<T>> {
    let bad = |m: &str| Error::malformed("checkpoint", m);
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32s = [0u32; 8];
    for v in &mut u32s {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        *v = u32::from_le_bytes(b);
    }
    let mut f64s = [0f64; 3];
    for v in &mut f64s {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        *v = f64::from_le_bytes(b);
    }
    let [version, channels, window, layers, hidden, kreg, rreg, classes] = u32s;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let reg = |code| Regularizer::from_code(code).ok_or_else(|| bad("unknown regularizer code"));
    let config = ModelConfig {
        input_channels: channels as usize,
        window_len: window as usize,
        n_layers: layers as usize,
        hidden_units: hidden as usize,
        dropout: f64s[0],
        kernel_reg: reg(kreg)?,
        recurrent_reg: reg(rreg)?,
        n_classes: classes as usize,
        l1: f64s[1],
        l2: f64s[2],
    };
    config.validate()?;
    let mut params = Params::<T>::zeros(&config);
    let body = &bytes[r.position() as usize..];
    if body.len() != 8 * params.len() {
        return Err(bad(&format!(
            "expected {} parameter bytes, found {}",
            8 * params.len(),
            body.len()
        )));
    }
    let mut words = body.chunks_exact(8);
    for (_, t) in params.tensors_mut() {
        for w in t.iter_mut() {
            let b: [u8; 8] = words.next().expect("length checked").try_into().expect("chunk of 8");
            *w = T::lit(f64::from_le_bytes(b));
        }
    }
    BiLstmModel::from_params(config, params)
}

pub fn save_checkpoint<T: Scalar>(model: &BiLstmModel<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<BiLstmModel<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = ModelConfig::new(4, 3, 5);
        cfg.n_layers = 2;
        cfg.hidden_units = 3;
        cfg.dropout = 0.4;
        cfg.kernel_reg = Regularizer::L1L2;
        let model = BiLstmModel::<f64>::new(cfg, 11).unwrap();
        let back: BiLstmModel<f64> = decode_checkpoint(&encode_checkpoint(&model)).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let model = BiLstmModel::<f32>::new(ModelConfig::new(2, 2, 2), 1).unwrap();
        let bytes = encode_checkpoint(&model);
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint::<f32>(&wrong).is_err());
        assert!(decode_checkpoint::<f32>(&bytes[..10]).is_err());
    }
}
