//! One-to-one binding between concepts and their representing neurons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{ConceptHierarchy, ConceptId};
use crate::network::NeuronId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BindError {
    #[error("{concept} is already bound to {existing}")]
    ConceptBound { concept: ConceptId, existing: NeuronId },
    #[error("{neuron} already represents {existing}")]
    NeuronBound { neuron: NeuronId, existing: ConceptId },
    #[error("level-{level} concept cannot bind to a layer-{layer} neuron")]
    WrongLayer { level: u32, layer: u32 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepMap {
    forward: BTreeMap<ConceptId, NeuronId>,
    reverse: BTreeMap<NeuronId, ConceptId>,
}

impl RepMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fixed input mapping: level-0 concept `i` is input neuron `i`.
    pub fn with_inputs(h: &ConceptHierarchy) -> Self {
        let mut map = Self::new();
        for c in h.level(0) {
            map.bind(c, NeuronId::new(0, c.index)).expect("fresh map");
        }
        map
    }

    pub fn bind(&mut self, concept: ConceptId, neuron: NeuronId) -> Result<(), BindError> {
        if concept.level != neuron.layer {
            return Err(BindError::WrongLayer { level: concept.level, layer: neuron.layer });
        }
        self.insert_unchecked_layer(concept, neuron)
    }

    /// Binding without the layer-equals-level rule, for networks that place
    /// reps on arbitrary layers.
    pub fn insert_unchecked_layer(&mut self, concept: ConceptId, neuron: NeuronId) -> Result<(), BindError> {
        if let Some(&existing) = self.forward.get(&concept) {
            return Err(BindError::ConceptBound { concept, existing });
        }
        if let Some(&existing) = self.reverse.get(&neuron) {
            return Err(BindError::NeuronBound { neuron, existing });
        }
        self.forward.insert(concept, neuron);
        self.reverse.insert(neuron, concept);
        Ok(())
    }

    pub fn rep(&self, concept: ConceptId) -> Option<NeuronId> {
        self.forward.get(&concept).copied()
    }

    pub fn concept_of(&self, neuron: NeuronId) -> Option<ConceptId> {
        self.reverse.get(&neuron).copied()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConceptId, NeuronId)> + '_ {
        self.forward.iter().map(|(&c, &n)| (c, n))
    }

    /// Every concept of `h` has a rep.
    pub fn is_complete(&self, h: &ConceptHierarchy) -> bool {
        h.concepts().all(|c| self.forward.contains_key(&c))
    }

    /// Forward and reverse maps are mutually inverse.
    pub fn is_injective(&self) -> bool {
        self.forward.len() == self.reverse.len()
            && self.forward.iter().all(|(c, n)| self.reverse.get(n) == Some(c))
    }
}
