//! Weight files: `<name>.meta.json` plus `<name>.wenc.ldif` (d x k),
//! `<name>.wdec.ldif` (k x d) and `<name>.bias.ldif` (1 x d).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SaeModel;
use crate::error::{Error, Result};
use crate::store::{read_tensor, write_tensor};

pub const SAE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaeMeta {
    pub version: u32,
    pub d: usize,
    pub k: usize,
    pub topk: usize,
    pub expansion: usize,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn save_sae(model: &SaeModel, prefix: &Path) -> Result<()> {
    let expansion = model.expansion().ok_or_else(|| {
        Error::InvalidArgument(format!("k={} is not a multiple of d={}", model.k(), model.d()))
    })?;
    let meta = SaeMeta {
        version: SAE_FORMAT_VERSION,
        d: model.d(),
        k: model.k(),
        topk: model.topk(),
        expansion,
    };
    let meta_path = with_suffix(prefix, ".meta.json");
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
    write_tensor(&with_suffix(prefix, ".wenc.ldif"), model.d(), model.k(), &model.w_enc())?;
    write_tensor(&with_suffix(prefix, ".wdec.ldif"), model.k(), model.d(), model.w_dec())?;
    write_tensor(&with_suffix(prefix, ".bias.ldif"), 1, model.d(), model.bias())
}

pub fn load_sae(prefix: &Path) -> Result<SaeModel> {
    let meta_path = with_suffix(prefix, ".meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SaeMeta = serde_json::from_str(&text)?;
    let bad = |reason: String| Error::BadHeader {
        path: meta_path.clone(),
        reason,
    };
    if meta.version != SAE_FORMAT_VERSION {
        return Err(bad(format!("unsupported SAE format version {}", meta.version)));
    }
    if meta.k != meta.expansion * meta.d {
        return Err(bad(format!(
            "k={} does not equal expansion {} x d {}",
            meta.k, meta.expansion, meta.d
        )));
    }
    let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
        if got != want {
            Err(bad(format!(
                "{name} has shape {}x{}, metadata implies {}x{}",
                got.0, got.1, want.0, want.1
            )))
        } else {
            Ok(())
        }
    };
    let (r, c, w_enc) = read_tensor(&with_suffix(prefix, ".wenc.ldif"))?;
    expect("wenc", (r, c), (meta.d, meta.k))?;
    let (r, c, w_dec) = read_tensor(&with_suffix(prefix, ".wdec.ldif"))?;
    expect("wdec", (r, c), (meta.k, meta.d))?;
    let (r, c, bias) = read_tensor(&with_suffix(prefix, ".bias.ldif"))?;
    expect("bias", (r, c), (1, meta.d))?;
    SaeModel::from_parts(meta.d, meta.k, meta.topk, &w_enc, &w_dec, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("sae");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = SaeModel::init(4, 16, 3, vec![0.25, -1.0, 3.5, 1e-8], &mut rng).unwrap();
        save_sae(&m, &prefix).unwrap();
        let back = load_sae(&prefix).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn meta_shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("sae");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = SaeModel::init(4, 16, 3, vec![0.0; 4], &mut rng).unwrap();
        save_sae(&m, &prefix).unwrap();
        let meta = with_suffix(&prefix, ".meta.json");
        let text = std::fs::read_to_string(&meta).unwrap();
        std::fs::write(&meta, text.replace("\"k\": 16", "\"k\": 20").replace("\"expansion\": 4", "\"expansion\": 5")).unwrap();
        assert!(matches!(load_sae(&prefix), Err(Error::BadHeader { .. })));
        std::fs::write(&meta, text.replace("\"version\": 1", "\"version\": 2")).unwrap();
        assert!(matches!(load_sae(&prefix), Err(Error::BadHeader { .. })));
    }
}
