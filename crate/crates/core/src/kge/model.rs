use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeId, RelationId, Triple};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TransE,
    HolE,
    ConvKB,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::HolE => "hole",
            ModelKind::ConvKB => "convkb",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "hole" => Ok(ModelKind::HolE),
            "convkb" => Ok(ModelKind::ConvKB),
            other => Err(Error::config("model_kind", format!("unknown model kind {other:?}"))),
        }
    }
}

/// Distance used by TransE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum NormKind {
    L1,
    #[default]
    L2,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
        }
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            other => Err(Error::config("norm", format!("unknown norm {other:?}"))),
        }
    }
}

/// Entity and relation vectors plus the ConvKB filter bank and output
/// weights. Matrices are row-major; ConvKB weight `f * dim + i` reads the
/// activation of filter `f` at row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<T> {
    pub(crate) kind: ModelKind,
    pub(crate) dim: usize,
    pub(crate) norm: NormKind,
    pub(crate) seed: u64,
    pub(crate) entities: Vec<T>,
    pub(crate) relations: Vec<T>,
    pub(crate) filters: Vec<T>,
    pub(crate) weights: Vec<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    /// A zero-initialised model. `num_filters` is ignored unless `kind` is ConvKB.
    pub fn zeros(kind: ModelKind, num_entities: usize, num_relations: usize, dim: usize, num_filters: usize) -> Self {
        let tau = if kind == ModelKind::ConvKB { num_filters } else { 0 };
        EmbeddingModel {
            kind,
            dim,
            norm: NormKind::L2,
            seed: 0,
            entities: vec![T::zero(); num_entities * dim],
            relations: vec![T::zero(); num_relations * dim],
            filters: vec![T::zero(); tau * 3],
            weights: vec![T::zero(); tau * dim],
        }
    }

    /// Every parameter drawn uniformly from `[-6/sqrt(d), 6/sqrt(d)]`, in
    /// block order entities, relations, filters, weights.
    pub fn random(
        kind: ModelKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        num_filters: usize,
        seed: u64,
    ) -> Self {
        let mut model = Self::zeros(kind, num_entities, num_relations, dim, num_filters);
        model.seed = seed;
        let bound = 6.0 / (dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in model.parameters_mut() {
            for x in block.iter_mut() {
                *x = T::from_f64_lossy(dist.sample(&mut rng));
            }
        }
        if kind == ModelKind::TransE {
            model.normalize_entities();
        }
        model
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> NormKind {
        self.norm
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len() / self.dim.max(1)
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len() / self.dim.max(1)
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len() / 3
    }

    pub fn entity(&self, id: NodeId) -> &[T] {
        &self.entities[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    pub fn relation(&self, id: RelationId) -> &[T] {
        &self.relations[id.index() * self.dim..(id.index() + 1) * self.dim]
    }

    pub fn entity_mut(&mut self, id: NodeId) -> &mut [T] {
        let d = self.dim;
        &mut self.entities[id.index() * d..(id.index() + 1) * d]
    }

    pub fn relation_mut(&mut self, id: RelationId) -> &mut [T] {
        let d = self.dim;
        &mut self.relations[id.index() * d..(id.index() + 1) * d]
    }

    /// Filter `f` as its three column weights (head, relation, tail).
    pub fn filter(&self, f: usize) -> &[T] {
        &self.filters[f * 3..f * 3 + 3]
    }

    pub fn filters_mut(&mut self) -> &mut [T] {
        &mut self.filters
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    /// Named parameter blocks in archive order.
    pub fn blocks(&self) -> Vec<(&'static str, &[T])> {
        let mut out = vec![("entity_vectors", &self.entities[..]), ("relation_vectors", &self.relations[..])];
        if self.kind == ModelKind::ConvKB {
            out.push(("convkb_filters", &self.filters[..]));
            out.push(("convkb_weights", &self.weights[..]));
        }
        out
    }

    pub fn parameters(&self) -> [&[T]; 4] {
        [&self.entities, &self.relations, &self.filters, &self.weights]
    }

    pub fn parameters_mut(&mut self) -> [&mut [T]; 4] {
        [&mut self.entities, &mut self.relations, &mut self.filters, &mut self.weights]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|b| b.len()).sum()
    }

    pub fn parameter_bytes(&self) -> usize {
        self.parameter_count() * std::mem::size_of::<T>()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Rescales every non-zero entity vector to unit L2 norm.
    pub fn normalize_entities(&mut self) {
        let d = self.dim;
        if d == 0 {
            return;
        }
        for row in self.entities.chunks_mut(d) {
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm > T::zero() {
                row.iter_mut().for_each(|x| *x = *x / norm);
            }
        }
    }

    pub(crate) fn check_ids(&self, h: NodeId, r: RelationId, t: NodeId) -> Result<()> {
        let n = self.num_entities();
        let m = self.num_relations();
        if h.index() >= n {
            return Err(Error::IdOutOfRange { kind: "entity", id: h.index(), size: n });
        }
        if t.index() >= n {
            return Err(Error::IdOutOfRange { kind: "entity", id: t.index(), size: n });
        }
        if r.index() >= m {
            return Err(Error::IdOutOfRange { kind: "relation", id: r.index(), size: m });
        }
        Ok(())
    }

    /// Plausibility of `(h, r, t)` under the model's kind; higher is better.
    pub fn score(&self, h: NodeId, r: RelationId, t: NodeId) -> Result<T> {
        self.check_ids(h, r, t)?;
        Ok(self.score_unchecked(h, r, t))
    }

    pub fn score_triple(&self, triple: &Triple) -> Result<T> {
        self.score(triple.head, triple.relation, triple.tail)
    }

    pub(crate) fn score_unchecked(&self, h: NodeId, r: RelationId, t: NodeId) -> T {
        let (vh, vr, vt) = (self.entity(h), self.relation(r), self.entity(t));
        match self.kind {
            ModelKind::TransE => transe(vh, vr, vt, self.norm),
            ModelKind::HolE => hole(vh, vr, vt),
            ModelKind::ConvKB => convkb(vh, vr, vt, &self.filters, &self.weights),
        }
    }
}

/// `-||h + r - t||` under `norm`.
pub fn transe<T: Scalar>(h: &[T], r: &[T], t: &[T], norm: NormKind) -> T {
    let diffs = h.iter().zip(r).zip(t).map(|((&a, &b), &c)| a + b - c);
    match norm {
        NormKind::L1 => -diffs.map(|x| x.abs()).sum::<T>(),
        NormKind::L2 => -diffs.map(|x| x * x).sum::<T>().sqrt(),
    }
}

/// `[a ⋆ b]_k = Σ_i a_i b_{(i+k) mod d}`.
pub fn circular_correlation<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let d = a.len();
    (0..d)
        .map(|k| {
            // split the wraparound instead of taking a modulus per term
            let (head, tail) = b.split_at(k);
            let lead = a[..d - k].iter().zip(tail).map(|(&x, &y)| x * y).sum::<T>();
            let wrap = a[d - k..].iter().zip(head).map(|(&x, &y)| x * y).sum::<T>();
            lead + wrap
        })
        .collect()
}

/// `r · (h ⋆ t)`.
pub fn hole<T: Scalar>(h: &[T], r: &[T], t: &[T]) -> T {
    circular_correlation(h, t).iter().zip(r).map(|(&c, &w)| c * w).sum()
}

/// Width-3 filters over the rows of `[h r t]`, ReLU, then a dot product
/// with the flattened feature maps.
pub fn convkb<T: Scalar>(h: &[T], r: &[T], t: &[T], filters: &[T], weights: &[T]) -> T {
    let d = h.len();
    let mut score = T::zero();
    for (f, w) in filters.chunks_exact(3).zip(weights.chunks_exact(d.max(1))) {
        for i in 0..d {
            let pre = f[0] * h[i] + f[1] * r[i] + f[2] * t[i];
            if pre > T::zero() {
                score = score + w[i] * pre;
            }
        }
    }
    score
}
