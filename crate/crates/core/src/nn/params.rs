use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable matrix (vectors are `rows x 1`), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

pub enum Init {
    Zeros,
    Uniform(f64),
    /// `uniform(-1/sqrt(cols), 1/sqrt(cols))`
    FanIn,
    Values(Vec<f64>),
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut R) -> ParamId {
        let n = rows * cols;
        let values = match init {
            Init::Zeros => vec![0.0; n],
            Init::Uniform(a) => (0..n).map(|_| rng.gen_range(-a..=a)).collect(),
            Init::FanIn => {
                let a = 1.0 / (cols as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..=a)).collect()
            }
            Init::Values(v) => {
                assert_eq!(v.len(), n, "initial values for `{name}`");
                v
            }
        };
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            values,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Overwrites every value from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Shape("parameter stores differ in length".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if (a.rows, a.cols) != (b.rows, b.cols) {
                return Err(Error::Shape(format!("parameter `{}` differs in shape", a.name)));
            }
            a.values.copy_from_slice(&b.values);
        }
        Ok(())
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    bufs: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Grads {
        Grads {
            bufs: store.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.bufs.iter_mut().flatten().for_each(|x| *x *= c);
    }

    pub fn fill_zero(&mut self) {
        self.bufs.iter_mut().flatten().for_each(|x| *x = 0.0);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.bufs.iter().enumerate().map(|(i, b)| (ParamId(i), b.as_slice()))
    }

    pub fn all_finite(&self) -> bool {
        self.bufs.iter().flatten().all(|x| x.is_finite())
    }
}
