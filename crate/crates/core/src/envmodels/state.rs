use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::ops::{Deref, DerefMut};

pub const MAX_DIM: usize = 3;

/// Small inline state vector; dereferences to a slice of its true length.
#[derive(Clone, Copy, PartialEq)]
pub struct State {
    v: [f64; MAX_DIM],
    dim: usize,
}

impl State {
    /// Panics if `x` is longer than [`MAX_DIM`].
    pub fn from_slice(x: &[f64]) -> Self {
        assert!(
            x.len() <= MAX_DIM,
            "state dimension {} exceeds {MAX_DIM}",
            x.len()
        );
        let mut v = [0.0; MAX_DIM];
        v[..x.len()].copy_from_slice(x);
        Self { v, dim: x.len() }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &State) -> State {
        let mut out = *self;
        for i in 0..self.dim {
            out.v[i] += a * other.v[i];
        }
        out
    }
}

impl Deref for State {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.v[..self.dim]
    }
}

impl DerefMut for State {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.v[..self.dim]
    }
}

impl std::fmt::Debug for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

impl Serialize for State {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (**self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!(
                "state must have 1..={MAX_DIM} components, got {}",
                v.len()
            )));
        }
        Ok(State::from_slice(&v))
    }
}
