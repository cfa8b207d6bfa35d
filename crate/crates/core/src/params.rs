//! Named parameter storage shared by every network in the pipeline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Which network a parameter belongs to. Training phases select
/// parameters by component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Encoder,
    Decoder,
    Extractor,
    Generator1,
    Generator2,
    Discriminator1,
    Discriminator2,
    /// Post-hoc evaluation models (classifier / predictor).
    Probe,
}

impl Component {
    pub const MODEL: [Component; 7] = [
        Component::Encoder,
        Component::Decoder,
        Component::Extractor,
        Component::Generator1,
        Component::Generator2,
        Component::Discriminator1,
        Component::Discriminator2,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub component: Component,
    pub value: Tensor,
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot uniform over `(fan_in, fan_out)`.
    Xavier { fan_in: usize, fan_out: usize },
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        component: Component,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let value = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, 1.0),
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
            }
            Init::Uniform(bound) => Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound)),
        };
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.into(),
            component,
            value,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// All parameters owned by any of `components`, in registration order.
    pub fn ids_of(&self, components: &[Component]) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| components.contains(&e.component))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}
