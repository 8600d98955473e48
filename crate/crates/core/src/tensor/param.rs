use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ERP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Owns every learnable tensor of a model, addressed by [`ParamId`] or by
/// unique dotted name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad: None });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => acc.add_assign(g),
            slot => *slot = Some(g.clone()),
        }
    }

    /// The same parameters converted to another precision.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), value: p.value.cast(), grad: p.grad.as_ref().map(|g| g.cast()) })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Overwrites values from checkpoint entries; every parameter must be
    /// present with a matching shape.
    pub fn load_values(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        let given: HashMap<&str, &Tensor<f32>> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in &mut self.params {
            let t = given
                .get(p.name.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::shape(
                    "load_values",
                    format!("{}: checkpoint {:?} vs model {:?}", p.name, t.shape(), p.value.shape()),
                ));
            }
            p.value = t.cast();
        }
        Ok(())
    }
}

pub fn write_checkpoint<T: Element, W: Write>(store: &ParamStore<T>, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name)?;
        w.write_u8(p.value.rank() as u8)?;
        for &d in p.value.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in p.value.data() {
            w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
        }
    }
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R, path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let fmt = |detail: String| Error::format(path, detail);
    let trunc = |e: std::io::Error| fmt(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(fmt(format!("bad magic {magic:?}, expected ERP1")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(trunc)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.read_u16::<LittleEndian>().map_err(trunc)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|e| fmt(format!("parameter name is not UTF-8: {e}")))?;
        let rank = r.read_u8().map_err(trunc)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(trunc)? as usize);
        }
        if rank == 0 || shape.contains(&0) {
            return Err(fmt(format!("parameter {name} has invalid shape {shape:?}")));
        }
        let mut data = vec![0f32; numel(&shape)];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(trunc)?;
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Element>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(store, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(&[1])).unwrap();
        assert!(s.add("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn bad_magic() {
        let bytes = b"ERPX\0\0\0\0".to_vec();
        let err = read_checkpoint(&bytes[..], Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn truncated() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::ones(&[2, 3])).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&s, &mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_checkpoint(&buf[..], Path::new("mem")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(proptest::num::f32::ANY, 1..40),
            names in proptest::collection::btree_set("[a-z]{1,6}(\\.[a-z0-9]{1,4}){0,2}", 1..4),
        ) {
            let mut s = ParamStore::<f32>::new();
            for name in &names {
                s.add(name.clone(), Tensor::new(vec![values.len()], values.clone()).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            write_checkpoint(&s, &mut buf).unwrap();
            let back = read_checkpoint(&buf[..], Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), s.len());
            for ((n, t), p) in back.iter().zip(s.iter()) {
                prop_assert_eq!(n, &p.name);
                let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = p.value.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
