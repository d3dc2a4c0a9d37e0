//! Layer building blocks shared by the encoder and decoder.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParameterStore, Real, Tape, Var};

/// Either registers fresh parameters or binds to ones already in a store
/// (after loading a checkpoint), so a layout is declared exactly once.
pub struct ParamSource<'a, T: Real> {
    store: &'a mut ParameterStore<T>,
    rng: Option<&'a mut ChaCha8Rng>,
    scale: f64,
}

impl<'a, T: Real> ParamSource<'a, T> {
    pub fn fresh(store: &'a mut ParameterStore<T>, rng: &'a mut ChaCha8Rng, scale: f64) -> Self {
        Self {
            store,
            rng: Some(rng),
            scale,
        }
    }

    pub fn bind(store: &'a mut ParameterStore<T>) -> Self {
        Self {
            store,
            rng: None,
            scale: 0.0,
        }
    }

    fn get(&mut self, name: &str, shape: Vec<usize>, zero: bool) -> Result<ParamId> {
        match self.rng.as_deref_mut() {
            Some(_) if zero => Ok(self.store.add_zeros(name, shape)),
            Some(rng) => Ok(self.store.add_uniform(name, shape, self.scale, rng)),
            None => {
                let id = self
                    .store
                    .id(name)
                    .ok_or_else(|| Error::MissingParam(name.to_string()))?;
                let found = self.store.value(id).shape().to_vec();
                if found != shape {
                    return Err(Error::ParamShape {
                        name: name.to_string(),
                        expected: shape,
                        found,
                    });
                }
                Ok(id)
            }
        }
    }

    pub fn weight(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        self.get(name, shape, false)
    }

    pub fn bias(&mut self, name: &str, len: usize) -> Result<ParamId> {
        self.get(name, vec![len], true)
    }
}

/// `y = x · W + b` with `W: in × out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(src: &mut ParamSource<'_, T>, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            w: src.weight(&format!("{name}.w"), vec![input, output])?,
            b: src.bias(&format!("{name}.b"), output)?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        Ok(tape.affine(x, w, b)?)
    }
}

/// Single-layer LSTM cell, gate order input/forget/candidate/output.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub input: Linear,
    pub recurrent: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Real>(src: &mut ParamSource<'_, T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            input: Linear::new(src, &format!("{name}.x"), input, 4 * hidden)?,
            recurrent: src.weight(&format!("{name}.h.w"), vec![hidden, 4 * hidden])?,
            hidden,
        })
    }

    /// One step over a batch of rows; `x: n × in`, `h, c: n × hidden`.
    pub fn step<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let d = self.hidden;
        let gx = self.input.forward(tape, x)?;
        let u = tape.param(self.recurrent);
        let gh = tape.matmul(h, u)?;
        let gates = tape.add(gx, gh)?;
        let i = tape.slice_cols(gates, 0, d)?;
        let f = tape.slice_cols(gates, d, 2 * d)?;
        let g = tape.slice_cols(gates, 2 * d, 3 * d)?;
        let o = tape.slice_cols(gates, 3 * d, 4 * d)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next);
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
