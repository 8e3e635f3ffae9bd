//! Model checkpoints: a single JSON document holding the vocabulary and
//! every parameter block, written compactly and validated on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, NUM_SPECIALS, SPECIAL_TOKENS};
use crate::error::{Error, Result};
use crate::model::{Mat, ModelParams, Tensors};

const FORMAT: &str = "gentype-checkpoint-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    dim: usize,
    /// All tokens in id order, specials first.
    vocab: Vec<String>,
    e: Vec<f64>,
    w_c: Vec<f64>,
    w_y: Vec<f64>,
    w_h: Vec<f64>,
    b_h: Vec<f64>,
    u: Vec<f64>,
    b_o: Vec<f64>,
}

pub fn save<W: Write>(mut writer: W, params: &ModelParams, vocab: &Vocabulary) -> Result<()> {
    if vocab.size() != params.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.size(),
            params.vocab_size
        )));
    }
    if !params.t.all_finite() {
        return Err(Error::Checkpoint(
            "refusing to save non-finite parameters".into(),
        ));
    }
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        dim: params.dim,
        vocab: vocab.tokens().to_vec(),
        e: params.t.e.data.clone(),
        w_c: params.t.w_c.data.clone(),
        w_y: params.t.w_y.data.clone(),
        w_h: params.t.w_h.data.clone(),
        b_h: params.t.b_h.clone(),
        u: params.t.u.data.clone(),
        b_o: params.t.b_o.clone(),
    };
    serde_json::to_writer(&mut writer, &file)?;
    writer.write_all(b"\n")?;
    Ok(())
}

fn mat_from(name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
    if data.len() != rows * cols {
        return Err(Error::Checkpoint(format!(
            "block {name} has {} values, expected {}",
            data.len(),
            rows * cols
        )));
    }
    Ok(Mat { rows, cols, data })
}

pub fn load<R: Read>(reader: R) -> Result<(ModelParams, Vocabulary)> {
    let file: CheckpointFile =
        serde_json::from_reader(reader).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?}, expected {FORMAT:?}",
            file.format
        )));
    }
    if file.dim == 0 {
        return Err(Error::Checkpoint("dimension must be positive".into()));
    }
    if file.vocab.len() <= NUM_SPECIALS {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries, needs more than the {NUM_SPECIALS} specials",
            file.vocab.len()
        )));
    }
    for (i, want) in SPECIAL_TOKENS.iter().enumerate() {
        if file.vocab[i] != *want {
            return Err(Error::Checkpoint(format!(
                "special token {i} is {:?}, expected {want:?}",
                file.vocab[i]
            )));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for t in &file.vocab {
        if !seen.insert(t) {
            return Err(Error::Checkpoint(format!("duplicate vocabulary token {t:?}")));
        }
    }
    let v = file.vocab.len();
    let d = file.dim;
    if file.b_h.len() != d {
        return Err(Error::Checkpoint(format!(
            "block b_h has {} values, expected {d}",
            file.b_h.len()
        )));
    }
    if file.b_o.len() != v {
        return Err(Error::Checkpoint(format!(
            "block b_o has {} values, expected {v}",
            file.b_o.len()
        )));
    }
    let t = Tensors {
        e: mat_from("e", v, d, file.e)?,
        w_c: mat_from("w_c", d, d, file.w_c)?,
        w_y: mat_from("w_y", d, d, file.w_y)?,
        w_h: mat_from("w_h", d, d, file.w_h)?,
        b_h: file.b_h,
        u: mat_from("u", v, d, file.u)?,
        b_o: file.b_o,
    };
    if !t.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter value".into()));
    }
    let vocab = Vocabulary::from_tokens(file.vocab[NUM_SPECIALS..].to_vec());
    Ok((
        ModelParams {
            vocab_size: v,
            dim: d,
            t,
        },
        vocab,
    ))
}

pub fn save_path(path: &Path, params: &ModelParams, vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    save(BufWriter::new(file), params, vocab)
}

pub fn load_path(path: &Path) -> Result<(ModelParams, Vocabulary)> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    load(BufReader::new(file))
}
