//! Association-rule solver: level-wise Apriori mining, rule generation from
//! exact integer counts, and prediction by masking rules whose antecedent is
//! contained in the observed types.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::eval::RankedPrediction;
use crate::graph::{NodeId, SceneRecord};
use crate::{Error, Fraction, Result};

/// Sorted, duplicate-free item list.
pub type Itemset = Vec<NodeId>;

/// One transaction per scene.
pub type Transaction = BTreeSet<NodeId>;

/// Frequent itemsets with their support counts.
pub type FrequentItemsets = BTreeMap<Itemset, u64>;

pub fn transactions(scenes: &[SceneRecord]) -> Vec<Transaction> {
    scenes.iter().filter(|s| !s.observed.is_empty()).map(|s| s.observed.clone()).collect()
}

/// Parses `"p/q"` or a decimal such as `"0.05"` into an exact fraction.
pub fn parse_fraction(text: &str) -> Result<Fraction> {
    let bad = || Error::Invalid(format!("not a fraction: {text:?}"));
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let num: u64 = num.trim().parse().map_err(|_| bad())?;
        let den: u64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Fraction::new(num, den));
    }
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 18 {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let num: u64 = digits.parse().map_err(|_| bad())?;
    Ok(Fraction::new(num, 10u64.pow(frac.len() as u32)))
}

/// Smallest count `c` with `c / n >= fraction`.
fn min_count(fraction: Fraction, n: u64) -> u64 {
    let num = u128::from(*fraction.numer()) * u128::from(n);
    let den = u128::from(*fraction.denom());
    num.div_ceil(den) as u64
}

fn contains_all(transaction: &Transaction, items: &[NodeId]) -> bool {
    items.iter().all(|i| transaction.contains(i))
}

/// All itemsets whose support count reaches `ceil(min_support * |T|)`.
///
/// Level `k` candidates join two frequent `(k-1)`-itemsets sharing their
/// first `k-2` items, are pruned unless every `(k-1)`-subset is frequent,
/// and are then counted in one pass over the transactions.
pub fn mine_frequent_itemsets(transactions: &[Transaction], min_support: Fraction) -> Result<FrequentItemsets> {
    if *min_support.numer() == 0 || min_support > Fraction::from_integer(1) {
        return Err(Error::config("min_support", format!("{min_support} is outside (0, 1]")));
    }
    if transactions.is_empty() {
        return Err(Error::Invalid("no transactions".into()));
    }
    let threshold = min_count(min_support, transactions.len() as u64);

    let mut singles: BTreeMap<NodeId, u64> = BTreeMap::new();
    for t in transactions {
        for &item in t {
            *singles.entry(item).or_default() += 1;
        }
    }
    let mut level: Vec<(Itemset, u64)> =
        singles.into_iter().filter(|&(_, c)| c >= threshold).map(|(i, c)| (vec![i], c)).collect();
    let mut frequent = FrequentItemsets::new();

    while !level.is_empty() {
        let previous: HashSet<&Itemset> = level.iter().map(|(s, _)| s).collect();
        let mut candidates = Vec::new();
        for (i, (a, _)) in level.iter().enumerate() {
            for (b, _) in &level[i + 1..] {
                let k = a.len();
                if a[..k - 1] != b[..k - 1] {
                    // `level` is sorted, so no later itemset shares this prefix
                    break;
                }
                let mut cand = a.clone();
                cand.push(b[k - 1]);
                let all_subsets_frequent = (0..cand.len()).all(|skip| {
                    let sub: Itemset = cand.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, &x)| x).collect();
                    previous.contains(&sub)
                });
                if all_subsets_frequent {
                    candidates.push(cand);
                }
            }
        }
        frequent.extend(level.drain(..));
        level = candidates
            .into_iter()
            .filter_map(|c| {
                let count = transactions.iter().filter(|t| contains_all(t, &c)).count() as u64;
                (count >= threshold).then_some((c, count))
            })
            .collect();
        level.sort();
    }
    Ok(frequent)
}

/// `antecedent => consequent`, with the integer counts its support and
/// confidence are computed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationRule {
    pub antecedent: Itemset,
    pub consequent: Itemset,
    /// Transactions containing antecedent ∪ consequent.
    pub joint_count: u64,
    pub antecedent_count: u64,
    pub n_transactions: u64,
}

impl AssociationRule {
    pub fn support(&self) -> Fraction {
        Fraction::new(self.joint_count, self.n_transactions)
    }

    pub fn confidence(&self) -> Fraction {
        Fraction::new(self.joint_count, self.antecedent_count)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    pub rules: Vec<AssociationRule>,
    pub n_transactions: u64,
}

impl RuleSet {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Emits `A => F \ A` for every frequent `F` with `|F| >= 2` and non-empty
/// proper subset `A`, kept when `count(F) / count(A) >= min_confidence`.
pub fn generate_rules(frequent: &FrequentItemsets, n_transactions: u64, min_confidence: Fraction) -> Result<RuleSet> {
    if min_confidence > Fraction::from_integer(1) {
        return Err(Error::config("min_confidence", format!("{min_confidence} is above 1")));
    }
    let mut rules = Vec::new();
    for (itemset, &joint) in frequent.iter().filter(|(s, _)| s.len() >= 2) {
        let k = itemset.len();
        for mask in 1..(1u64 << k) - 1 {
            let (antecedent, consequent): (Vec<_>, Vec<_>) =
                itemset.iter().enumerate().partition(|&(j, _)| mask & (1 << j) != 0);
            let antecedent: Itemset = antecedent.into_iter().map(|(_, &x)| x).collect();
            let consequent: Itemset = consequent.into_iter().map(|(_, &x)| x).collect();
            let antecedent_count = *frequent
                .get(&antecedent)
                .ok_or_else(|| Error::MissingSubset(antecedent.iter().map(|n| n.0).collect()))?;
            let confidence = Fraction::new(joint, antecedent_count);
            if confidence >= min_confidence {
                rules.push(AssociationRule {
                    antecedent,
                    consequent,
                    joint_count: joint,
                    antecedent_count,
                    n_transactions,
                });
            }
        }
    }
    Ok(RuleSet { rules, n_transactions })
}

/// Mines with Apriori and generates rules in one step.
pub fn train_arm(scenes: &[SceneRecord], min_support: Fraction, min_confidence: Fraction) -> Result<RuleSet> {
    let txs = transactions(scenes);
    let frequent = mine_frequent_itemsets(&txs, min_support)?;
    generate_rules(&frequent, txs.len() as u64, min_confidence)
}

/// Ranks unobserved consequent items of every rule whose antecedent is
/// contained in `observed`.
///
/// An item scores the highest confidence among the rules proposing it;
/// equal confidences fall back to the higher support, then ascending id.
pub fn predict_arm(rules: &RuleSet, observed: &BTreeSet<NodeId>) -> RankedPrediction {
    let mut best: HashMap<NodeId, (Fraction, Fraction)> = HashMap::new();
    for rule in rules.rules.iter().filter(|r| r.antecedent.iter().all(|a| observed.contains(a))) {
        let key = (rule.confidence(), rule.support());
        for &item in rule.consequent.iter().filter(|i| !observed.contains(i)) {
            best.entry(item).and_modify(|cur| *cur = (*cur).max(key)).or_insert(key);
        }
    }
    let mut ranked: Vec<(NodeId, (Fraction, Fraction))> = best.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    RankedPrediction::from_ordered(
        ranked.into_iter().map(|(id, (conf, _))| (id, *conf.numer() as f64 / *conf.denom() as f64)),
    )
}
