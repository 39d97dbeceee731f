//! File formats: tab-separated triples, JSON-lines scene datasets, binary
//! model archives and tab-separated rule sets.
//!
//! Model archive layout: a UTF-8 header of `key=value` lines opened by
//! `kep-model-archive` and closed by `end_header`, followed by the parameter
//! blocks listed in the `blocks` key, each a row-major run of little-endian
//! IEEE-754 `f32` values.
//!
//! | model_kind | blocks |
//! |------------|--------|
//! | transe, hole | `entity_vectors` n×d, `relation_vectors` m×d |
//! | convkb | the above, `convkb_filters` τ×3, `convkb_weights` 1×(τ·d) |
//! | cc | `labels` 1×L, `label_counts` 1×L, `pair_counts` L×L |

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arm::{AssociationRule, Itemset, RuleSet};
use crate::cc::CooccurrenceModel;
use crate::graph::{KnowledgeGraph, NodeId, SceneRecord};
use crate::kge::{EmbeddingModel, ModelKind};
use crate::{Error, Result, Scalar};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "kep-model-archive";
const END_HEADER: &str = "end_header\n";
/// Largest integer every `f32` represents exactly.
const EXACT_F32_INT: u64 = 1 << 24;

pub type LabelledTriple = (String, String, String);

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Parse { line, message: "invalid UTF-8".into() }
    })
}

/// Data lines of a text format: skips blank and `#` lines, yields 1-based
/// line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_triples(bytes: &[u8]) -> Result<Vec<LabelledTriple>> {
    data_lines(utf8(bytes)?)
        .map(|(line, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse { line, message: "expected 3 fields".into() });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse { line, message: "empty field".into() });
            }
            Ok((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()))
        })
        .collect()
}

/// Triples in file order; `#` comments and blank lines are skipped.
pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<LabelledTriple>> {
    parse_triples(&read(path.as_ref())?)
}

/// Writes triples tab-separated, preceded by `comments` as `#` lines.
pub fn save_triples<'a>(
    triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    comments: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = Vec::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for (h, r, t) in triples {
        let _ = writeln!(out, "{h}\t{r}\t{t}");
    }
    write(path.as_ref(), &out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneLine {
    scene_id: String,
    observed: Vec<String>,
    masked: Vec<String>,
}

/// One JSON object per scene; arrays list labels in ascending id order.
pub fn encode_scenes(scenes: &[SceneRecord], g: &KnowledgeGraph, comments: &[String]) -> Result<Vec<u8>> {
    let label = |id: NodeId| {
        g.node_label(id).map(str::to_string).ok_or(Error::IdOutOfRange {
            kind: "node",
            id: id.index(),
            size: g.num_nodes(),
        })
    };
    let mut out = Vec::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for s in scenes {
        let line = SceneLine {
            scene_id: label(s.scene)?,
            observed: s.observed.iter().map(|&i| label(i)).collect::<Result<_>>()?,
            masked: s.masked.iter().map(|&i| label(i)).collect::<Result<_>>()?,
        };
        serde_json::to_writer(&mut out, &line).expect("scene line serializes");
        out.push(b'\n');
    }
    Ok(out)
}

pub fn save_scenes(
    scenes: &[SceneRecord],
    g: &KnowledgeGraph,
    comments: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    write(path.as_ref(), &encode_scenes(scenes, g, comments)?)
}

pub fn parse_scenes(bytes: &[u8], g: &KnowledgeGraph) -> Result<Vec<SceneRecord>> {
    data_lines(utf8(bytes)?)
        .map(|(line, l)| {
            let parsed: SceneLine =
                serde_json::from_str(l).map_err(|e| Error::Parse { line, message: e.to_string() })?;
            let resolve =
                |label: &str| g.node_id(label).ok_or_else(|| Error::UnknownLabel { line, label: label.to_string() });
            let set = |labels: &[String], what: &str| -> Result<BTreeSet<NodeId>> {
                let ids = labels.iter().map(|l| resolve(l)).collect::<Result<BTreeSet<_>>>()?;
                if ids.len() != labels.len() {
                    return Err(Error::Parse { line, message: format!("duplicate label in {what}") });
                }
                Ok(ids)
            };
            let observed = set(&parsed.observed, "observed")?;
            let masked = set(&parsed.masked, "masked")?;
            if !observed.is_disjoint(&masked) {
                return Err(Error::Parse { line, message: "observed and masked overlap".into() });
            }
            Ok(SceneRecord { scene: resolve(&parsed.scene_id)?, observed, masked })
        })
        .collect()
}

/// Loads a scene dataset, resolving labels against `g`.
pub fn load_scenes(path: impl AsRef<Path>, g: &KnowledgeGraph) -> Result<Vec<SceneRecord>> {
    parse_scenes(&read(path.as_ref())?, g)
}

struct Header {
    fields: BTreeMap<String, String>,
    blocks: Vec<(String, usize, usize)>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.fields.get(key).map(String::as_str).ok_or_else(|| Error::ArchiveHeader(format!("missing key {key:?}")))
    }

    fn num<N: std::str::FromStr>(&self, key: &str) -> Result<N> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| Error::ArchiveHeader(format!("bad value for {key}: {raw:?}")))
    }
}

fn encode_archive(fields: &[(&str, String)], blocks: &[(&str, usize, usize, Vec<f32>)]) -> Vec<u8> {
    let mut out = format!("{MAGIC}\nformat_version={FORMAT_VERSION}\n");
    for (k, v) in fields {
        out.push_str(&format!("{k}={v}\n"));
    }
    let listing: Vec<String> = blocks.iter().map(|(name, r, c, _)| format!("{name}:{r}x{c}")).collect();
    out.push_str(&format!("blocks={}\n{END_HEADER}", listing.join(",")));
    let mut bytes = out.into_bytes();
    for (_, _, _, values) in blocks {
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn decode_archive(bytes: &[u8]) -> Result<(Header, Vec<Vec<f32>>)> {
    let end = bytes
        .windows(END_HEADER.len())
        .position(|w| w == END_HEADER.as_bytes())
        .ok_or_else(|| Error::ArchiveHeader("no end_header line".into()))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::ArchiveHeader("header is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::ArchiveHeader("not a model archive".into()));
    }
    let mut fields = BTreeMap::new();
    for line in lines {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::ArchiveHeader(format!("bad header line {line:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let mut header = Header { fields, blocks: Vec::new() };
    let version: u32 = header.num("format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ArchiveVersion { found: version, expected: FORMAT_VERSION });
    }
    let listing = header.get("blocks")?.to_string();
    for entry in listing.split(',').filter(|s| !s.is_empty()) {
        let parsed = entry.split_once(':').and_then(|(name, shape)| {
            let (r, c) = shape.split_once('x')?;
            Some((name.to_string(), r.parse().ok()?, c.parse().ok()?))
        });
        header.blocks.push(parsed.ok_or_else(|| Error::ArchiveHeader(format!("bad block entry {entry:?}")))?);
    }
    let mut body = &bytes[end + END_HEADER.len()..];
    let mut values = Vec::with_capacity(header.blocks.len());
    for (name, rows, cols) in &header.blocks {
        let len = rows
            .checked_mul(*cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::ArchiveShape(format!("block {name} is too large")))?;
        if body.len() < len {
            return Err(Error::ArchiveTruncated { block: name.clone() });
        }
        let (chunk, rest) = body.split_at(len);
        values.push(chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect());
        body = rest;
    }
    if !body.is_empty() {
        return Err(Error::ArchiveShape(format!("{} trailing bytes after the last block", body.len())));
    }
    Ok((header, values))
}

fn expect_blocks(header: &Header, expected: &[(&str, usize, usize)]) -> Result<()> {
    let found: Vec<(&str, usize, usize)> = header.blocks.iter().map(|(n, r, c)| (n.as_str(), *r, *c)).collect();
    if found != expected {
        return Err(Error::ArchiveShape(format!("blocks {found:?} do not match declared shape {expected:?}")));
    }
    Ok(())
}

fn embedding_shapes(kind: ModelKind, n: usize, m: usize, d: usize, tau: usize) -> Vec<(&'static str, usize, usize)> {
    let mut shapes = vec![("entity_vectors", n, d), ("relation_vectors", m, d)];
    if kind == ModelKind::ConvKB {
        shapes.push(("convkb_filters", tau, 3));
        shapes.push(("convkb_weights", 1, tau * d));
    }
    shapes
}

pub fn encode_model<T: Scalar>(model: &EmbeddingModel<T>, fingerprint: Option<&str>) -> Vec<u8> {
    let mut fields = vec![
        ("model_kind", model.kind().name().to_string()),
        ("dim", model.dim().to_string()),
        ("n", model.num_entities().to_string()),
        ("m", model.num_relations().to_string()),
    ];
    match model.kind() {
        ModelKind::ConvKB => fields.push(("tau", model.num_filters().to_string())),
        ModelKind::TransE => fields.push(("norm", model.norm().name().to_string())),
        ModelKind::HolE => {}
    }
    fields.push(("seed", model.seed().to_string()));
    if let Some(fp) = fingerprint {
        fields.push(("fingerprint", fp.to_string()));
    }
    let shapes =
        embedding_shapes(model.kind(), model.num_entities(), model.num_relations(), model.dim(), model.num_filters());
    let blocks: Vec<_> = shapes
        .into_iter()
        .zip(model.blocks())
        .map(|((name, r, c), (_, values))| (name, r, c, values.iter().map(|x| x.to_storage()).collect()))
        .collect();
    encode_archive(&fields, &blocks)
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<EmbeddingModel<T>> {
    let (header, blocks) = decode_archive(bytes)?;
    let kind: ModelKind = header.get("model_kind")?.parse()?;
    let (d, n, m): (usize, usize, usize) = (header.num("dim")?, header.num("n")?, header.num("m")?);
    let tau: usize = if kind == ModelKind::ConvKB { header.num("tau")? } else { 0 };
    // before allocating: the payload must already hold what the header claims
    expect_blocks(&header, &embedding_shapes(kind, n, m, d, tau))?;
    let mut model = EmbeddingModel::<T>::zeros(kind, n, m, d, tau);
    if kind == ModelKind::TransE {
        model = model.with_norm(header.get("norm")?.parse()?);
    }
    model.seed = header.num("seed")?;
    for (dst, src) in model.parameters_mut().into_iter().zip(&blocks) {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = T::from_storage(s);
        }
    }
    Ok(model)
}

pub fn save_model<T: Scalar>(
    model: &EmbeddingModel<T>,
    fingerprint: Option<&str>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write(path.as_ref(), &encode_model(model, fingerprint))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<EmbeddingModel<T>> {
    decode_model(&read(path.as_ref())?)
}

fn exact_f32(value: u64, what: &str) -> Result<f32> {
    if value > EXACT_F32_INT {
        return Err(Error::Invalid(format!("{what} {value} exceeds 2^24 and cannot be stored exactly")));
    }
    Ok(value as f32)
}

fn exact_u64(value: f32, what: &str) -> Result<u64> {
    if value.is_nan() || value < 0.0 || value.fract() != 0.0 || value as u64 > EXACT_F32_INT {
        return Err(Error::ArchiveShape(format!("{what} entry {value} is not an exact count")));
    }
    Ok(value as u64)
}

pub fn encode_cc_model(model: &CooccurrenceModel, fingerprint: Option<&str>) -> Result<Vec<u8>> {
    let l = model.vocab_size();
    let mut fields = vec![
        ("model_kind", "cc".to_string()),
        ("labels", l.to_string()),
        ("n_scenes", model.n_scenes().to_string()),
        ("alpha", format!("{:?}", model.alpha())),
    ];
    if let Some(fp) = fingerprint {
        fields.push(("fingerprint", fp.to_string()));
    }
    let to_f32 = |xs: &[u64], what: &str| xs.iter().map(|&x| exact_f32(x, what)).collect::<Result<Vec<_>>>();
    let labels: Vec<u64> = model.labels().iter().map(|n| u64::from(n.0)).collect();
    let blocks = vec![
        ("labels", 1, l, to_f32(&labels, "label id")?),
        ("label_counts", 1, l, to_f32(model.label_counts(), "label count")?),
        ("pair_counts", l, l, to_f32(model.pair_counts(), "pair count")?),
    ];
    Ok(encode_archive(&fields, &blocks))
}

pub fn decode_cc_model(bytes: &[u8]) -> Result<CooccurrenceModel> {
    let (header, blocks) = decode_archive(bytes)?;
    if header.get("model_kind")? != "cc" {
        return Err(Error::ArchiveHeader(format!("expected model_kind=cc, found {}", header.get("model_kind")?)));
    }
    let l: usize = header.num("labels")?;
    expect_blocks(&header, &[("labels", 1, l), ("label_counts", 1, l), ("pair_counts", l, l)])?;
    let ints = |xs: &[f32], what: &str| xs.iter().map(|&x| exact_u64(x, what)).collect::<Result<Vec<u64>>>();
    let labels = ints(&blocks[0], "labels")?.into_iter().map(|x| NodeId(x as u32)).collect();
    CooccurrenceModel::from_parts(
        labels,
        ints(&blocks[1], "label_counts")?,
        ints(&blocks[2], "pair_counts")?,
        header.num("n_scenes")?,
        header.num("alpha")?,
    )
}

pub fn save_cc_model(model: &CooccurrenceModel, fingerprint: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_cc_model(model, fingerprint)?)
}

pub fn load_cc_model(path: impl AsRef<Path>) -> Result<CooccurrenceModel> {
    decode_cc_model(&read(path.as_ref())?)
}

/// The `model_kind` header value of an archive.
pub fn archive_kind(path: impl AsRef<Path>) -> Result<String> {
    let (header, _) = decode_archive(&read(path.as_ref())?)?;
    Ok(header.get("model_kind")?.to_string())
}

/// Rule lines: antecedent labels, consequent labels (comma-joined), support
/// as `joint/transactions`, confidence as `joint/antecedent_count`.
pub fn encode_rules(rules: &RuleSet, g: &KnowledgeGraph, comments: &[String]) -> Result<Vec<u8>> {
    let join = |items: &Itemset| -> Result<String> {
        let labels = items
            .iter()
            .map(|&i| g.node_label(i).ok_or(Error::IdOutOfRange { kind: "node", id: i.index(), size: g.num_nodes() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(labels.join(","))
    };
    let mut out = Vec::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "# transactions={}", rules.n_transactions);
    for r in &rules.rules {
        let _ = writeln!(
            out,
            "{}\t{}\t{}/{}\t{}/{}",
            join(&r.antecedent)?,
            join(&r.consequent)?,
            r.joint_count,
            r.n_transactions,
            r.joint_count,
            r.antecedent_count
        );
    }
    Ok(out)
}

pub fn save_rules(rules: &RuleSet, g: &KnowledgeGraph, comments: &[String], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_rules(rules, g, comments)?)
}

pub fn parse_rules(bytes: &[u8], g: &KnowledgeGraph) -> Result<RuleSet> {
    let text = utf8(bytes)?;
    let mut n_transactions =
        text.lines().find_map(|l| l.strip_prefix("# transactions=")).and_then(|v| v.trim().parse::<u64>().ok());
    let mut rules = Vec::new();
    for (line, l) in data_lines(text) {
        let err = |m: &str| Error::Parse { line, message: m.to_string() };
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(err("expected 4 fields"));
        }
        let items = |field: &str| -> Result<Itemset> {
            let mut ids = Vec::new();
            let mut seen = HashSet::new();
            for label in field.split(',') {
                let id = g.node_id(label).ok_or_else(|| Error::UnknownLabel { line, label: label.to_string() })?;
                if !seen.insert(id) {
                    return Err(err("duplicate item"));
                }
                ids.push(id);
            }
            ids.sort();
            Ok(ids)
        };
        let ratio = |field: &str| -> Result<(u64, u64)> {
            let (a, b) = field.split_once('/').ok_or_else(|| err("expected numerator/denominator"))?;
            Ok((a.parse().map_err(|_| err("bad numerator"))?, b.parse().map_err(|_| err("bad denominator"))?))
        };
        let (antecedent, consequent) = (items(fields[0])?, items(fields[1])?);
        let (joint, total) = ratio(fields[2])?;
        let (joint_again, antecedent_count) = ratio(fields[3])?;
        if joint != joint_again || joint > antecedent_count || antecedent_count > total || total == 0 {
            return Err(err("inconsistent support/confidence counts"));
        }
        if antecedent.iter().any(|a| consequent.contains(a)) {
            return Err(err("antecedent and consequent overlap"));
        }
        if *n_transactions.get_or_insert(total) != total {
            return Err(err("transaction count differs from earlier rules"));
        }
        rules.push(AssociationRule {
            antecedent,
            consequent,
            joint_count: joint,
            antecedent_count,
            n_transactions: total,
        });
    }
    Ok(RuleSet { rules, n_transactions: n_transactions.unwrap_or(0) })
}

pub fn load_rules(path: impl AsRef<Path>, g: &KnowledgeGraph) -> Result<RuleSet> {
    parse_rules(&read(path.as_ref())?, g)
}
