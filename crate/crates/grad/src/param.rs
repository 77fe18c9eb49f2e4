use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{GradError, Result};
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a parameter within gradient bookkeeping. Clones get fresh ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named trainable tensor with its gradient accumulator.
///
/// Frozen parameters enter a tape as constants, so no gradient work is done
/// for them.
#[derive(Debug)]
pub struct Parameter {
    id: ParamId,
    name: String,
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    frozen: bool,
}

impl Clone for Parameter {
    fn clone(&self) -> Self {
        Parameter {
            id: ParamId::fresh(),
            name: self.name.clone(),
            value: self.value.clone(),
            grad: self.grad.clone(),
            frozen: self.frozen,
        }
    }
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Parameter {
            id: ParamId::fresh(),
            name: name.into(),
            value: Arc::new(value),
            grad: None,
            frozen: false,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn shared_value(&self) -> Arc<Tensor> {
        self.value.clone()
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        Arc::make_mut(&mut self.value)
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(GradError::Shape {
                op: "set_value",
                expected: self.value.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        self.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(GradError::Shape {
                op: "accumulate_grad",
                expected: self.value.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        match &mut self.grad {
            Some(acc) => acc.add_assign(g),
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

const MAGIC: &[u8; 5] = b"GSWT1";

/// Writes parameters in the `GSWT1` checkpoint layout: magic, then per
/// parameter `u32` name length, name bytes, `u32` rank, `u32` extents and
/// little-endian `f64` values. Entries run to end of stream.
pub fn write_checkpoint<W: Write>(mut w: W, params: &[&Parameter]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    w.write_all(MAGIC)?;
    for p in params {
        if !seen.insert(p.name()) {
            return Err(GradError::Validation(format!(
                "duplicate parameter name {:?}",
                p.name()
            )));
        }
        let name = p.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value().shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in p.value().data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads every `(name, tensor)` entry of a `GSWT1` checkpoint.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(5)? != MAGIC {
        return Err(GradError::Format("bad magic, expected GSWT1".into()));
    }
    let mut out = Vec::new();
    while cur.pos < buf.len() {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec())
            .map_err(|_| GradError::Format("parameter name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(GradError::Format(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| GradError::Format("extent overflow".into()))?;
        let bytes = cur.take(n.checked_mul(8).ok_or_else(|| GradError::Format("size overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| GradError::Format(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Assigns checkpoint entries to parameters by name. Every parameter must be
/// present with a matching shape.
pub fn load_into(params: &mut [&mut Parameter], entries: &[(String, Tensor)]) -> Result<()> {
    for p in params.iter_mut() {
        let (_, t) = entries
            .iter()
            .find(|(n, _)| n == p.name())
            .ok_or_else(|| GradError::Format(format!("checkpoint lacks parameter {:?}", p.name())))?;
        p.set_value(t.clone())?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| GradError::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let a = Parameter::new("layer.w", Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = Parameter::new("alpha", Tensor::scalar(0.1));
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &[&a, &b]).unwrap();
        assert_eq!(&bytes[..5], b"GSWT1");

        let entries = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].0, "layer.w");
        assert_eq!(&entries[0].1, a.value());
        assert_eq!(entries[1].1.rank(), 0);

        let mut a2 = Parameter::new("layer.w", Tensor::zeros(&[2, 3]));
        let mut b2 = Parameter::new("alpha", Tensor::scalar(0.0));
        load_into(&mut [&mut a2, &mut b2], &entries).unwrap();
        let mut again = Vec::new();
        write_checkpoint(&mut again, &[&a2, &b2]).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncated_and_bad_magic_are_errors() {
        let a = Parameter::new("w", Tensor::from_vec(vec![1.0, 2.0]));
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &[&a]).unwrap();
        for cut in 0..bytes.len() {
            if cut == 5 {
                // magic only: a valid empty checkpoint
                continue;
            }
            assert!(read_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(GradError::Format(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let a = Parameter::new("w", Tensor::scalar(1.0));
        let b = Parameter::new("w", Tensor::scalar(2.0));
        assert!(write_checkpoint(Vec::new(), &[&a, &b]).is_err());
    }
}
