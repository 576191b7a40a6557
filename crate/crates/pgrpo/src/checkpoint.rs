//! Policy checkpoints and the vocabulary manifest.
//!
//! A checkpoint is a binary file holding one header line
//! (`pgrpo-policy feature_dim=F hidden_dim=H vocab_size=V`) followed by the
//! flat parameters as little-endian `f64`. A text manifest next to it
//! (`<checkpoint>.manifest`) records the vocabulary hash, the feature layout
//! and the seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pgrpo_core::policy::{Dims, PolicyParams};
use pgrpo_core::vocab::{TokenId, TokenVocab};
use pgrpo_core::FeatureLayout;
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

const MAGIC: &str = "pgrpo-policy";

/// One `name<TAB>id` line per token, in id order.
pub fn vocab_manifest(vocab: &TokenVocab) -> String {
    vocab.entries().into_iter().map(|(name, id)| format!("{name}\t{id}\n")).collect()
}

pub fn parse_vocab_manifest(text: &str, origin: &Path) -> Result<Vec<(String, TokenId)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let err = |m: &str| Error::Parse { path: origin.to_path_buf(), line: i + 1, message: m.to_string() };
            let (name, id) = l.split_once('\t').ok_or_else(|| err("expected name<TAB>id"))?;
            Ok((name.to_string(), id.parse().map_err(|_| err("bad token id"))?))
        })
        .collect()
}

/// Hex SHA-256 of [`vocab_manifest`].
pub fn vocab_hash(vocab: &TokenVocab) -> String {
    hex::encode(Sha256::digest(vocab_manifest(vocab).as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub layout: FeatureLayout,
    pub seed: u64,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn header(dims: Dims) -> String {
    format!(
        "{MAGIC} feature_dim={} hidden_dim={} vocab_size={}\n",
        dims.feature_dim, dims.hidden_dim, dims.vocab_size
    )
}

pub fn encode_params(params: &PolicyParams) -> Vec<u8> {
    let mut bytes = header(params.dims()).into_bytes();
    bytes.reserve(params.as_slice().len() * 8);
    for x in params.as_slice() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    bytes
}

pub fn decode_params(bytes: &[u8], origin: &Path) -> Result<PolicyParams> {
    let bad = |m: String| Error::Format { path: origin.to_path_buf(), message: m };
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
    let head = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut fields = head.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(bad(format!("not a {MAGIC} checkpoint")));
    }
    let kv: BTreeMap<&str, usize> = fields
        .map(|f| {
            let (k, v) = f.split_once('=').ok_or_else(|| bad(format!("bad header field {f:?}")))?;
            Ok((k, v.parse().map_err(|_| bad(format!("bad header value {f:?}")))?))
        })
        .collect::<Result<_>>()?;
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("header lacks {k}")));
    let dims = Dims::new(get("feature_dim")?, get("hidden_dim")?, get("vocab_size")?)?;
    let body = &bytes[nl + 1..];
    if body.len() != dims.param_count() * 8 {
        return Err(bad(format!("expected {} parameters, found {} bytes", dims.param_count(), body.len())));
    }
    let theta: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(PolicyParams::from_vec(dims, theta)?)
}

pub fn render_manifest(ckpt: &Checkpoint) -> String {
    let dims = ckpt.params.dims();
    let vocab = ckpt.layout.vocab();
    format!(
        "format={MAGIC}\nvocab_sha256={}\nn_max={}\ncue_bits={}\nseed={}\nfeature_dim={}\nhidden_dim={}\nvocab_size={}\n",
        vocab_hash(&vocab),
        vocab.n_max(),
        ckpt.layout.cue_bits(),
        ckpt.seed,
        dims.feature_dim,
        dims.hidden_dim,
        dims.vocab_size,
    )
}

/// Writes the checkpoint and its manifest.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_params(&ckpt.params)).map_err(io_err(path))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, render_manifest(ckpt)).map_err(io_err(mpath))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let params = decode_params(&bytes, path)?;
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let bad = |m: String| Error::Format { path: mpath.clone(), message: m };
    let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("manifest lacks {k}")));
    let num = |k: &str| get(k)?.parse::<u64>().map_err(|_| bad(format!("bad value for {k}")));
    let vocab = TokenVocab::new(u8::try_from(num("n_max")?).map_err(|_| bad("n_max out of range".into()))?)?;
    if get("vocab_sha256")? != vocab_hash(&vocab) {
        return Err(bad("vocabulary hash does not match this build's vocabulary".into()));
    }
    let layout = FeatureLayout::new(vocab, num("cue_bits")? as usize);
    params.check_layout(&layout)?;
    Ok(Checkpoint { params, layout, seed: num("seed")? })
}
