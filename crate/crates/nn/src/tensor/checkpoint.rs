//! Checkpoint serialization: magic "FPCK0001", then one record per tensor
//! with name, dtype, shape, and a little-endian payload. Optimizer state is
//! stored as additional records tagged by kind, so a round-trip restores
//! training exactly.

use super::store::{OptState, ParameterStore, Tensor};
use super::{Precision, TensorError};
use std::collections::BTreeMap;
use std::io::{Read, Write};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FPCK0001";

const KIND_PARAM: u8 = 0;
const KIND_OPT_M: u8 = 1;
const KIND_OPT_V: u8 = 2;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

fn write_record(
    out: &mut impl Write,
    name: &str,
    kind: u8,
    rows: usize,
    cols: usize,
    data: &[f64],
    precision: Precision,
) -> std::io::Result<()> {
    out.write_all(&(name.len() as u16).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&[kind])?;
    let dtype = match precision {
        Precision::F32 => DTYPE_F32,
        Precision::F64 => DTYPE_F64,
    };
    out.write_all(&[dtype])?;
    out.write_all(&(rows as u32).to_le_bytes())?;
    out.write_all(&(cols as u32).to_le_bytes())?;
    match precision {
        Precision::F32 => {
            for v in data {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Precision::F64 => {
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_checkpoint(store: &ParameterStore, out: &mut impl Write) -> Result<(), TensorError> {
    let io = |e: std::io::Error| TensorError::Checkpoint(e.to_string());
    let (params, opt, step) = store.records();
    out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    out.write_all(&[match store.precision() {
        Precision::F32 => DTYPE_F32,
        Precision::F64 => DTYPE_F64,
    }])
    .map_err(io)?;
    out.write_all(&step.to_le_bytes()).map_err(io)?;
    let n_records = params.len()
        + opt
            .values()
            .map(|s| (!s.m.is_empty()) as usize + (!s.v.is_empty()) as usize)
            .sum::<usize>();
    out.write_all(&(n_records as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in params {
        write_record(out, name, KIND_PARAM, t.rows, t.cols, &t.data, store.precision()).map_err(io)?;
    }
    for (name, slot) in opt {
        let shape = &params[name];
        if !slot.m.is_empty() {
            write_record(out, name, KIND_OPT_M, shape.rows, shape.cols, &slot.m, store.precision())
                .map_err(io)?;
        }
        if !slot.v.is_empty() {
            write_record(out, name, KIND_OPT_V, shape.rows, shape.cols, &slot.v, store.precision())
                .map_err(io)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<ParameterStore, TensorError> {
    let bad = |msg: &str| TensorError::Checkpoint(msg.to_string());
    let io = |e: std::io::Error| TensorError::Checkpoint(e.to_string());

    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut byte = [0u8; 1];
    input.read_exact(&mut byte).map_err(io)?;
    let precision = match byte[0] {
        DTYPE_F32 => Precision::F32,
        DTYPE_F64 => Precision::F64,
        _ => return Err(bad("bad precision byte")),
    };
    let mut step_bytes = [0u8; 8];
    input.read_exact(&mut step_bytes).map_err(io)?;
    let step = u64::from_le_bytes(step_bytes);
    let mut count_bytes = [0u8; 4];
    input.read_exact(&mut count_bytes).map_err(io)?;
    let n_records = u32::from_le_bytes(count_bytes);

    let mut params: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut opt: BTreeMap<String, OptState> = BTreeMap::new();
    for _ in 0..n_records {
        let mut len_bytes = [0u8; 2];
        input.read_exact(&mut len_bytes).map_err(io)?;
        let mut name_bytes = vec![0u8; u16::from_le_bytes(len_bytes) as usize];
        input.read_exact(&mut name_bytes).map_err(io)?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("bad name"))?;
        let mut kind_dtype = [0u8; 2];
        input.read_exact(&mut kind_dtype).map_err(io)?;
        let (kind, dtype) = (kind_dtype[0], kind_dtype[1]);
        let mut dims = [0u8; 8];
        input.read_exact(&mut dims).map_err(io)?;
        let rows = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
        let n = rows * cols;
        let data = match dtype {
            DTYPE_F32 => {
                let mut raw = vec![0u8; n * 4];
                input.read_exact(&mut raw).map_err(io)?;
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                    .collect::<Vec<f64>>()
            }
            DTYPE_F64 => {
                let mut raw = vec![0u8; n * 8];
                input.read_exact(&mut raw).map_err(io)?;
                raw.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect::<Vec<f64>>()
            }
            _ => return Err(bad("bad dtype")),
        };
        match kind {
            KIND_PARAM => {
                params.insert(name, Tensor { rows, cols, data });
            }
            KIND_OPT_M => opt.entry(name).or_default().m = data,
            KIND_OPT_V => opt.entry(name).or_default().v = data,
            _ => return Err(bad("bad record kind")),
        }
    }
    for name in opt.keys() {
        if !params.contains_key(name) {
            return Err(bad("optimizer state without parameter"));
        }
    }
    Ok(ParameterStore::from_records(precision, params, opt, step))
}
