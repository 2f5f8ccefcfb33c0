//! Single-file model checkpoints: a JSON header (config + parameter names +
//! batch-norm layout) followed by one SPT1 record per parameter and two per
//! batch-norm layer (running mean, running variance).
//!
//! Loading rebuilds the model with a fresh deterministic init and then
//! overwrites every parameter by name, so parameter ids stay consistent
//! with the returned store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_record, write_record};
use crate::model::{CrrnConfig, CrrnModel};
use crate::scalar::Scalar;
use crate::tape::{BnStats, ParamStore};
use crate::tensor::{Dims, Tensor};

const MAGIC: &[u8; 4] = b"CRN1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: CrrnConfig,
    params: Vec<String>,
    bn_channels: Vec<usize>,
    bn_initialized: Vec<bool>,
}

fn tensor_record<S: Scalar, W: Write>(w: &mut W, t: &Tensor<S>) -> Result<()> {
    let d = t.dims();
    let dims = [d.n as u32, d.c as u32, d.h as u32, d.w as u32];
    let data: Vec<f32> = t.data().iter().map(|v| v.as_f64() as f32).collect();
    write_record(w, &dims, &data)
}

fn record_tensor<S: Scalar, R: Read>(r: &mut R) -> Result<Tensor<S>> {
    let (dims, data) = read_record(r)?;
    if dims.len() != 4 {
        return Err(Error::Format(format!("expected rank-4 record, got rank {}", dims.len())));
    }
    let d = Dims::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize);
    Tensor::new(d, data.into_iter().map(|v| S::from_real(v as f64)).collect())
}

pub fn save<S: Scalar>(
    path: &Path,
    model: &CrrnModel,
    store: &ParamStore<S>,
    bn: &[BnStats<S>],
) -> Result<()> {
    let header = Header {
        config: model.cfg.clone(),
        params: store.iter().map(|(_, e)| e.name.clone()).collect(),
        bn_channels: bn.iter().map(|s| s.running_mean.len()).collect(),
        bn_initialized: bn.iter().map(|s| s.initialized).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, e) in store.iter() {
        tensor_record(&mut w, &e.value)?;
    }
    for s in bn {
        let c = s.running_mean.len();
        let as_f32 = |v: &[S]| -> Vec<f32> { v.iter().map(|x| x.as_f64() as f32).collect() };
        write_record(&mut w, &[1, c as u32, 1, 1], &as_f32(&s.running_mean))?;
        write_record(&mut w, &[1, c as u32, 1, 1], &as_f32(&s.running_var))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<(CrrnModel, ParamStore<S>, Vec<BnStats<S>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a CRN1 checkpoint".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    header.config.validate()?;

    let mut store = ParamStore::new();
    let model = CrrnModel::init::<S, _>(
        header.config.clone(),
        &mut store,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    if store.len() != header.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            header.params.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (id, name) in ids.into_iter().zip(&header.params) {
        if &store.get(id).name != name {
            return Err(Error::Format(format!(
                "parameter order mismatch: expected '{}', found '{name}'",
                store.get(id).name
            )));
        }
        let t: Tensor<S> = record_tensor(&mut r)?;
        if t.dims() != store.value(id).dims() {
            return Err(Error::Format(format!("dims mismatch for parameter '{name}'")));
        }
        *store.value_mut(id) = t;
    }
    let mut bn = Vec::with_capacity(header.bn_channels.len());
    for (&c, &init) in header.bn_channels.iter().zip(&header.bn_initialized) {
        let mean: Tensor<S> = record_tensor(&mut r)?;
        let var: Tensor<S> = record_tensor(&mut r)?;
        if mean.dims().len() != c || var.dims().len() != c {
            return Err(Error::Format("batch-norm stats size mismatch".into()));
        }
        bn.push(BnStats {
            running_mean: mean.data().to_vec(),
            running_var: var.data().to_vec(),
            initialized: init,
        });
    }
    let expected = model.new_bn_state::<S>().len();
    if bn.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint has {} batch-norm layers, model expects {expected}",
            bn.len()
        )));
    }
    Ok((model, store, bn))
}
