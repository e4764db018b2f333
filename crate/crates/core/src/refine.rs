//! Networks that map a state and a preference vector to a refined preference
//! in `(0, 1)`.

use nncore::{Activation, Mlp, ParamId, ParamStore, Tape, Var};
use rand::RngCore;

use crate::error::{KogunError, Result};
use crate::registry::Registry;

pub trait Refiner: Send + Sync {
    fn name(&self) -> &'static str;

    /// `states: n x state_dim`, `preference: n x width` to `n x width`.
    fn refine(&self, tape: &mut Tape, store: &ParamStore, states: Var, preference: Var) -> Result<Var>;

    fn params(&self) -> Vec<ParamId>;

    fn param_count(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefinerShape {
    pub state_dim: usize,
    pub width: usize,
    pub hidden: usize,
}

fn check_dims(tape: &Tape, shape: &RefinerShape, states: Var, preference: Var) -> Result<()> {
    let (s, p) = (tape.shape(states), tape.shape(preference));
    if s.1 != shape.state_dim || p.1 != shape.width || s.0 != p.0 {
        return Err(KogunError::Usage(format!(
            "refiner built for states of {} and preferences of {}, got {s:?} and {p:?}",
            shape.state_dim, shape.width
        )));
    }
    Ok(())
}

/// One MLP over the concatenation of state and preference.
#[derive(Debug, Clone)]
pub struct ConcatRefiner {
    shape: RefinerShape,
    net: Mlp,
}

impl ConcatRefiner {
    pub fn new(store: &mut ParamStore, shape: RefinerShape, rng: &mut dyn RngCore) -> Self {
        let net = Mlp::new(
            store,
            "refine.concat",
            &[shape.state_dim + shape.width, shape.hidden, shape.hidden, shape.width],
            Activation::Tanh,
            rng,
        );
        Self { shape, net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl Refiner for ConcatRefiner {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn refine(&self, tape: &mut Tape, store: &ParamStore, states: Var, preference: Var) -> Result<Var> {
        check_dims(tape, &self.shape, states, preference)?;
        let x = tape.concat(&[states, preference])?;
        let out = self.net.forward(tape, store, x)?;
        Ok(tape.sigmoid(out))
    }

    fn params(&self) -> Vec<ParamId> {
        self.net.params()
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }
}

/// A target network `width -> hidden -> width` whose every layer's weights
/// and biases are produced from the state by a dedicated generator network.
#[derive(Debug, Clone)]
pub struct HyperRefiner {
    shape: RefinerShape,
    /// `(inputs, outputs)` of each target layer.
    target: Vec<(usize, usize)>,
    generators: Vec<Mlp>,
}

/// Half-width of the uniform init of each generator's output layer.
pub const HYPER_OUTPUT_SCALE: f64 = 0.01;

impl HyperRefiner {
    pub fn new(store: &mut ParamStore, shape: RefinerShape, rng: &mut dyn RngCore) -> Result<Self> {
        let target = vec![(shape.width, shape.hidden), (shape.hidden, shape.width)];
        let generators: Vec<Mlp> = target
            .iter()
            .enumerate()
            .map(|(j, &(i, o))| {
                let net = Mlp::new(
                    store,
                    &format!("refine.hyper.layer{j}"),
                    &[shape.state_dim, shape.hidden, shape.hidden, o * i + o],
                    Activation::Tanh,
                    rng,
                );
                net.rescale_output(store, HYPER_OUTPUT_SCALE, rng);
                net
            })
            .collect();
        let refiner = Self {
            shape,
            target,
            generators,
        };
        let expected = Self::expected_param_count(shape);
        if refiner.param_count() != expected {
            return Err(KogunError::Usage(format!(
                "generator networks hold {} parameters, expected {expected}",
                refiner.param_count()
            )));
        }
        Ok(refiner)
    }

    /// Closed form: for each target layer with `P = out*in + out` generated
    /// values, a generator `s -> h -> h -> P`.
    pub fn expected_param_count(shape: RefinerShape) -> usize {
        let (s, h, w) = (shape.state_dim, shape.hidden, shape.width);
        let generator = |p: usize| (s * h + h) + (h * h + h) + (h * p + p);
        generator(w * h + h) + generator(h * w + w)
    }

    /// Generated parameters of every target layer, one `n x P` node each.
    pub fn generate(&self, tape: &mut Tape, store: &ParamStore, states: Var) -> Result<Vec<Var>> {
        self.generators
            .iter()
            .map(|g| Ok(g.forward(tape, store, states)?))
            .collect()
    }

    pub fn target_layers(&self) -> &[(usize, usize)] {
        &self.target
    }
}

impl Refiner for HyperRefiner {
    fn name(&self) -> &'static str {
        "hyper"
    }

    fn refine(&self, tape: &mut Tape, store: &ParamStore, states: Var, preference: Var) -> Result<Var> {
        check_dims(tape, &self.shape, states, preference)?;
        let generated = self.generate(tape, store, states)?;
        let mut x = preference;
        let last = self.target.len() - 1;
        for (j, (&(i, o), theta)) in self.target.iter().zip(generated).enumerate() {
            let w = tape.slice_cols(theta, 0, o * i)?;
            let b = tape.slice_cols(theta, o * i, o)?;
            let z = tape.row_matvec(w, x)?;
            let z = tape.add(z, b)?;
            x = if j == last { tape.sigmoid(z) } else { tape.tanh(z) };
        }
        Ok(x)
    }

    fn params(&self) -> Vec<ParamId> {
        self.generators.iter().flat_map(|g| g.params()).collect()
    }

    fn param_count(&self) -> usize {
        self.generators.iter().map(|g| g.param_count()).sum()
    }
}

pub type RefinerFactory = fn(&mut ParamStore, RefinerShape, &mut dyn RngCore) -> Result<Box<dyn Refiner>>;

pub fn refiner_registry() -> Registry<RefinerFactory> {
    let mut r: Registry<RefinerFactory> = Registry::new("refiner");
    r.register("concat", |store, shape, rng| Ok(Box::new(ConcatRefiner::new(store, shape, rng))));
    r.register("hyper", |store, shape, rng| Ok(Box::new(HyperRefiner::new(store, shape, rng)?)));
    r
}
