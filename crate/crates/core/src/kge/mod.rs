//! Link-prediction solver: TransE, HolE and ConvKB scorers trained with a
//! margin ranking loss, and filtered ranking of candidate tails.

mod model;
mod train;

pub use model::{circular_correlation, convkb, hole, transe, EmbeddingModel, ModelKind, NormKind};
pub use train::{
    margin_loss, margin_loss_gradient, negative_sample, train, EpochStats, Gradients, NegativePool, NegativeSampler,
    TrainConfig, TrainOutcome,
};

use crate::eval::RankedPrediction;
use crate::graph::{KnowledgeGraph, NodeId, RelationId, Triple};
use crate::{Error, Result, Scalar};

/// Scores every candidate tail of `(scene, relation, ?)`; best first, ties by
/// ascending id.
pub fn predict_tail<T: Scalar>(
    model: &EmbeddingModel<T>,
    scene: NodeId,
    relation: RelationId,
    candidates: &[NodeId],
) -> Result<RankedPrediction> {
    let scored = candidates
        .iter()
        .map(|&c| Ok((c, model.score(scene, relation, c)?.to_f64_lossy())))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedPrediction::from_scores(scored))
}

/// Filtered rank of the true tail: candidates forming another known triple
/// `(h, r, c)` in `known` are skipped, and ties with the true tail count
/// against it.
pub fn rank_filtered<T: Scalar>(
    model: &EmbeddingModel<T>,
    known: &KnowledgeGraph,
    test: &Triple,
    candidates: &[NodeId],
) -> Result<usize> {
    if !candidates.contains(&test.tail) {
        return Err(Error::Invalid(format!("true tail {} is not among the candidates", test.tail)));
    }
    let truth = model.score_triple(test)?;
    let mut rank = 1;
    for &c in candidates {
        if c == test.tail || known.contains(&Triple { tail: c, ..*test }) {
            continue;
        }
        if model.score(test.head, test.relation, c)? >= truth {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Rank of the true tail among all candidates, without filtering.
pub fn rank_raw<T: Scalar>(model: &EmbeddingModel<T>, test: &Triple, candidates: &[NodeId]) -> Result<usize> {
    rank_filtered(model, &KnowledgeGraph::default(), test, candidates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_model() -> EmbeddingModel<f64> {
        // entity 0 = scene at origin, relation (0,1); entity 1 is exact, entity 2 is off
        let mut m = EmbeddingModel::zeros(ModelKind::TransE, 3, 1, 2, 0).with_norm(NormKind::L1);
        m.entity_mut(NodeId(0)).copy_from_slice(&[1.0, 0.0]);
        m.relation_mut(RelationId(0)).copy_from_slice(&[0.0, 1.0]);
        m.entity_mut(NodeId(1)).copy_from_slice(&[1.0, 1.0]);
        m.entity_mut(NodeId(2)).copy_from_slice(&[0.0, 0.0]);
        m
    }

    #[test]
    fn exact_translation_first() {
        let p = predict_tail(&line_model(), NodeId(0), RelationId(0), &[NodeId(2), NodeId(1)]).unwrap();
        assert_eq!(p.ids(), vec![NodeId(1), NodeId(2)]);
        assert_eq!(p.entries[0].score, 0.0);
        assert_eq!(p.entries[1].score, -2.0);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let m = EmbeddingModel::<f32>::zeros(ModelKind::HolE, 5, 1, 3, 0);
        let p = predict_tail(&m, NodeId(0), RelationId(0), &[NodeId(4), NodeId(2), NodeId(3)]).unwrap();
        assert_eq!(p.ids(), vec![NodeId(2), NodeId(3), NodeId(4)]);
    }

    #[test]
    fn rank_extremes() {
        let m = line_model();
        let cands = [NodeId(1), NodeId(2)];
        let empty = KnowledgeGraph::default();
        let best = Triple::new(NodeId(0), RelationId(0), NodeId(1));
        let worst = Triple::new(NodeId(0), RelationId(0), NodeId(2));
        assert_eq!(rank_filtered(&m, &empty, &best, &cands).unwrap(), 1);
        assert_eq!(rank_filtered(&m, &empty, &worst, &cands).unwrap(), 2);
        assert!(rank_filtered(&m, &empty, &worst, &[NodeId(1)]).is_err());
    }

    #[test]
    fn ties_are_pessimistic() {
        let m = EmbeddingModel::<f64>::zeros(ModelKind::HolE, 4, 1, 2, 0);
        let t = Triple::new(NodeId(0), RelationId(0), NodeId(1));
        let cands = [NodeId(1), NodeId(2), NodeId(3)];
        assert_eq!(rank_raw(&m, &t, &cands).unwrap(), 3);
    }
}
