//! Named parameter tensors and their per-iteration binding onto a tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

/// Ordered collection of named tensors. Names starting with `theta.` are
/// model parameters, `phi.` proposal parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) {
        let entry = ParamEntry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            data: value.into_data(),
            trainable,
        };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        let e = self.entry(name)?;
        Ok(Tensor::new(&e.shape, e.data.clone()))
    }

    pub fn set_data(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        assert_eq!(e.data.len(), data.len(), "size of `{name}` changed");
        e.data.copy_from_slice(data);
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .trainable = trainable;
        Ok(())
    }

    /// Sets the flag on every entry whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.trainable = trainable;
            }
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.name.clone())
            .collect()
    }

    /// Number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.data.len()).sum()
    }

    /// Records every entry on `tape`: trainable ones as differentiable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                let t = Tensor::new(&e.shape, e.data.clone());
                let v = if e.trainable { tape.var(t) } else { tape.constant(t) };
                (e.name.clone(), v, e.trainable)
            })
            .collect();
        BoundParams { tape, vars }
    }

    /// Copies every entry present in `other` (same name and shape) into `self`.
    pub fn overwrite_from(&mut self, other: &ParamSet) -> Result<()> {
        for e in &other.entries {
            let mine = self
                .entries
                .iter_mut()
                .find(|m| m.name == e.name)
                .ok_or_else(|| Error::UnknownParam(e.name.clone()))?;
            if mine.shape != e.shape {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?}, file has {:?}",
                    e.name, mine.shape, e.shape
                )));
            }
            mine.data.clone_from(&e.data);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("params json: {e}")))
    }
}

pub struct BoundParams<'t> {
    tape: &'t Tape,
    vars: Vec<(String, Var<'t>, bool)>,
}

impl<'t> BoundParams<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Panics on an unknown name: models only ask for what they created.
    pub fn get(&self, name: &str) -> Var<'t> {
        self.vars
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, v, _)| *v)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var<'t>> {
        self.vars.iter().find(|(n, _, _)| n == name).map(|(_, v, _)| *v)
    }

    /// Trainable variables in a stable order, paired with their names.
    pub fn trainable(&self) -> Vec<(String, Var<'t>)> {
        self.vars
            .iter()
            .filter(|(_, _, t)| *t)
            .map(|(n, v, _)| (n.clone(), *v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_binding() {
        let mut p = ParamSet::new();
        p.insert("phi.mu", Tensor::matrix(2, 1, vec![0.5, -1.0]), true);
        p.insert("theta.a", Tensor::scalar(3.0), false);
        let q = ParamSet::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        let tape = Tape::new();
        let b = q.bind(&tape);
        assert!(b.get("phi.mu").requires_grad());
        assert!(!b.get("theta.a").requires_grad());
        assert_eq!(b.trainable().len(), 1);
        assert!(matches!(q.get("nope"), Err(Error::UnknownParam(_))));
    }
}
