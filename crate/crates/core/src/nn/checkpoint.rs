//! Checkpoint layout: a UTF-8 header
//!
//! ```text
//! igo-checkpoint 1
//! params <count>
//! <name> <d0>x<d1>...
//! end
//! ```
//!
//! followed by every value as little-endian `f64` in declaration order.

use std::io::{BufRead, Write};

use super::{NnError, ParamStore, Tensor};

const MAGIC: &str = "igo-checkpoint 1";

pub fn write_checkpoint<W: Write>(store: &ParamStore, w: &mut W) -> Result<(), NnError> {
    let mut header = format!("{MAGIC}\nparams {}\n", store.len());
    for (_, p) in store.iter() {
        if p.name.is_empty() || p.name.chars().any(char::is_whitespace) {
            return Err(NnError::Checkpoint(format!("unwritable parameter name `{}`", p.name)));
        }
        let dims: Vec<String> = p.value().shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("{} {}\n", p.name, dims.join("x")));
    }
    header.push_str("end\n");
    w.write_all(header.as_bytes())?;
    for (_, p) in store.iter() {
        for v in p.value().data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String, NnError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(NnError::Checkpoint("truncated header".into()));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Vec<(String, Tensor)>, NnError> {
    if read_line(r)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let count_line = read_line(r)?;
    let count: usize = count_line
        .strip_prefix("params ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| NnError::Checkpoint(format!("bad count line `{count_line}`")))?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = read_line(r)?;
        let (name, dims) = line
            .split_once(' ')
            .ok_or_else(|| NnError::Checkpoint(format!("bad entry `{line}`")))?;
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| NnError::Checkpoint(format!("bad shape `{dims}`")))?;
        entries.push((name.to_string(), shape));
    }
    if read_line(r)? != "end" {
        return Err(NnError::Checkpoint("missing end marker".into()));
    }
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for (name, shape) in entries {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| NnError::Checkpoint(format!("truncated data for `{name}`")))?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(out)
}
