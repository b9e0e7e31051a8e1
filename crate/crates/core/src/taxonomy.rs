//! The three-tier value hierarchy: pillars (T1) contain value groups (T2),
//! which contain the leaf values (T3) that sentences are labelled with.
//!
//! Taxonomies are read from a pipe-delimited text file, one leaf per line:
//!
//! ```text
//! # comment
//! Emotional | Contentment | Aesthetics Items | Physical appearance of item ...
//! ```
//!
//! Ids are derived from display names (see [`LabelId::from_name`]), so the
//! same file drives both display and the tokens used for label embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::pick;

/// Longest label name, in tokens, that feeds the label embedding.
pub const MAX_LABEL_TOKENS: usize = 4;

const BUNDLED: &str = include_str!("../data/taxonomy.txt");

/// Identifier of a node in any tier: the display name lowercased, with every
/// run of non-alphanumeric characters collapsed to `_`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(String);

impl LabelId {
    pub fn from_name(name: &str) -> LabelId {
        let mut id = String::with_capacity(name.len());
        let mut pending_sep = false;
        for c in name.chars() {
            if c.is_alphanumeric() {
                if pending_sep && !id.is_empty() {
                    id.push('_');
                }
                pending_sep = false;
                id.extend(c.to_lowercase());
            } else {
                pending_sep = true;
            }
        }
        LabelId(id)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Tokens of the id, in order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split('_').filter(|t| !t.is_empty())
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    fn from(s: &str) -> Self {
        LabelId::from_name(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelNode {
    pub t3: LabelId,
    pub name: String,
    pub t2: LabelId,
    pub t2_name: String,
    pub t1: LabelId,
    pub t1_name: String,
    pub description: String,
}

/// How a candidate T3 label relates to a gold T3 label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationTier {
    Positive,
    /// Wrong leaf, same value group.
    MildlyNegative,
    /// Different value group, same pillar.
    Negative,
    /// Different pillar.
    StrictlyNegative,
}

impl RelationTier {
    pub const ALL: [RelationTier; 4] = [
        RelationTier::Positive,
        RelationTier::MildlyNegative,
        RelationTier::Negative,
        RelationTier::StrictlyNegative,
    ];

    /// Relatedness targets `[y_t3, y_t2, y_t1]`.
    pub fn targets(self) -> [u8; 3] {
        match self {
            RelationTier::Positive => [1, 1, 1],
            RelationTier::MildlyNegative => [0, 1, 1],
            RelationTier::Negative => [0, 0, 1],
            RelationTier::StrictlyNegative => [0, 0, 0],
        }
    }

    /// Loss weight; confusing siblings is the mildest error.
    pub fn weight(self) -> f64 {
        match self {
            RelationTier::MildlyNegative => 0.5,
            _ => 1.0,
        }
    }

    /// The tier to fall back to when this one has no eligible label.
    pub fn stricter(self) -> Option<RelationTier> {
        match self {
            RelationTier::Positive => None,
            RelationTier::MildlyNegative => Some(RelationTier::Negative),
            RelationTier::Negative => Some(RelationTier::StrictlyNegative),
            RelationTier::StrictlyNegative => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationTier::Positive => "positive",
            RelationTier::MildlyNegative => "mildly_negative",
            RelationTier::Negative => "negative",
            RelationTier::StrictlyNegative => "strictly_negative",
        }
    }
}

impl fmt::Display for RelationTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A validated, immutable three-tier hierarchy.
#[derive(Clone, Debug)]
pub struct Taxonomy {
    nodes: Vec<LabelNode>,
    by_t3: HashMap<LabelId, usize>,
    t2_parent: BTreeMap<LabelId, LabelId>,
    t2_members: BTreeMap<LabelId, Vec<usize>>,
    t1_members: BTreeMap<LabelId, Vec<LabelId>>,
    t1_order: Vec<LabelId>,
    t2_order: Vec<LabelId>,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
    }
}

impl Taxonomy {
    /// The taxonomy that ships with the crate (57 values, 17 groups, 6 pillars).
    pub fn bundled() -> Taxonomy {
        Taxonomy::parse(BUNDLED).expect("bundled taxonomy is valid")
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Taxonomy> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Taxonomy::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Taxonomy> {
        let mut nodes = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, '|').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    line_no,
                    format!("expected 4 `|`-separated fields, found {}", fields.len()),
                ));
            }
            let (t1_name, t2_name, name, description) = (fields[0], fields[1], fields[2], fields[3]);
            for (what, value) in [("t1", t1_name), ("t2", t2_name)] {
                if LabelId::from_name(value).as_str().is_empty() {
                    return Err(Error::parse(line_no, format!("value `{name}` is missing its {what} parent")));
                }
            }
            if LabelId::from_name(name).as_str().is_empty() {
                return Err(Error::parse(line_no, "empty t3 name"));
            }
            if description.is_empty() {
                return Err(Error::parse(line_no, format!("value `{name}` has an empty description")));
            }
            nodes.push((
                line_no,
                LabelNode {
                    t3: LabelId::from_name(name),
                    name: name.to_string(),
                    t2: LabelId::from_name(t2_name),
                    t2_name: t2_name.to_string(),
                    t1: LabelId::from_name(t1_name),
                    t1_name: t1_name.to_string(),
                    description: description.to_string(),
                },
            ));
        }
        Taxonomy::build(nodes)
    }

    fn build(rows: Vec<(usize, LabelNode)>) -> Result<Taxonomy> {
        if rows.is_empty() {
            return Err(Error::NoLabels);
        }
        let mut nodes = Vec::with_capacity(rows.len());
        let mut by_t3 = HashMap::new();
        let mut t2_parent: BTreeMap<LabelId, LabelId> = BTreeMap::new();
        let mut t2_members: BTreeMap<LabelId, Vec<usize>> = BTreeMap::new();
        let mut t1_members: BTreeMap<LabelId, Vec<LabelId>> = BTreeMap::new();
        let mut t1_order = Vec::new();
        let mut t2_order = Vec::new();

        for (line_no, node) in rows {
            if by_t3.contains_key(&node.t3) {
                return Err(Error::parse(line_no, format!("duplicate t3 id `{}`", node.t3)));
            }
            if node.t3.tokens().count() > MAX_LABEL_TOKENS {
                log::warn!(
                    "label `{}` has more than {MAX_LABEL_TOKENS} tokens; only the first {MAX_LABEL_TOKENS} feed its embedding",
                    node.t3
                );
            }
            match t2_parent.get(&node.t2) {
                Some(parent) if *parent != node.t1 => {
                    return Err(Error::parse(
                        line_no,
                        format!("group `{}` is under both `{}` and `{}`", node.t2, parent, node.t1),
                    ));
                }
                Some(_) => {}
                None => {
                    t2_parent.insert(node.t2.clone(), node.t1.clone());
                    t2_order.push(node.t2.clone());
                    if !t1_members.contains_key(&node.t1) {
                        t1_order.push(node.t1.clone());
                    }
                    t1_members.entry(node.t1.clone()).or_default().push(node.t2.clone());
                }
            }
            let idx = nodes.len();
            by_t3.insert(node.t3.clone(), idx);
            t2_members.entry(node.t2.clone()).or_default().push(idx);
            nodes.push(node);
        }

        Ok(Taxonomy {
            nodes,
            by_t3,
            t2_parent,
            t2_members,
            t1_members,
            t1_order,
            t2_order,
        })
    }

    /// Serializes back to the file format. `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            out.push_str(&format!("{} | {} | {} | {}\n", n.t1_name, n.t2_name, n.name, n.description));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[LabelNode] {
        &self.nodes
    }

    pub fn t3_ids(&self) -> impl Iterator<Item = &LabelId> {
        self.nodes.iter().map(|n| &n.t3)
    }

    /// T2 ids in first-appearance order.
    pub fn t2_ids(&self) -> &[LabelId] {
        &self.t2_order
    }

    /// T1 ids in first-appearance order.
    pub fn t1_ids(&self) -> &[LabelId] {
        &self.t1_order
    }

    pub fn contains(&self, t3: &LabelId) -> bool {
        self.by_t3.contains_key(t3)
    }

    pub fn node(&self, t3: &LabelId) -> Result<&LabelNode> {
        self.by_t3
            .get(t3)
            .map(|&i| &self.nodes[i])
            .ok_or_else(|| Error::UnknownLabel(t3.to_string()))
    }

    /// Position of a T3 label in file order.
    pub fn index_of(&self, t3: &LabelId) -> Option<usize> {
        self.by_t3.get(t3).copied()
    }

    pub fn t2_of(&self, t3: &LabelId) -> Result<&LabelId> {
        self.node(t3).map(|n| &n.t2)
    }

    pub fn t1_of(&self, t3: &LabelId) -> Result<&LabelId> {
        self.node(t3).map(|n| &n.t1)
    }

    pub fn t1_of_group(&self, t2: &LabelId) -> Option<&LabelId> {
        self.t2_parent.get(t2)
    }

    /// T3 members of a group, in file order.
    pub fn group_members(&self, t2: &LabelId) -> Vec<&LabelId> {
        self.t2_members
            .get(t2)
            .map(|m| m.iter().map(|&i| &self.nodes[i].t3).collect())
            .unwrap_or_default()
    }

    /// T2 members of a pillar, in file order.
    pub fn pillar_groups(&self, t1: &LabelId) -> &[LabelId] {
        self.t1_members.get(t1).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Tokens of the label name that feed the label embedding.
    pub fn label_tokens(&self, t3: &LabelId) -> Result<Vec<String>> {
        let node = self.node(t3)?;
        Ok(node.t3.tokens().take(MAX_LABEL_TOKENS).map(str::to_string).collect())
    }

    pub fn relation(&self, a: &LabelId, b: &LabelId) -> Result<RelationTier> {
        let na = self.node(a)?;
        let nb = self.node(b)?;
        Ok(if na.t3 == nb.t3 {
            RelationTier::Positive
        } else if na.t2 == nb.t2 {
            RelationTier::MildlyNegative
        } else if na.t1 == nb.t1 {
            RelationTier::Negative
        } else {
            RelationTier::StrictlyNegative
        })
    }

    /// All labels standing in `tier` relative to `anchor`, in file order.
    pub fn eligible(&self, tier: RelationTier, anchor: &LabelId) -> Result<Vec<&LabelId>> {
        let a = self.node(anchor)?;
        Ok(self
            .nodes
            .iter()
            .filter(|n| {
                let rel = if n.t3 == a.t3 {
                    RelationTier::Positive
                } else if n.t2 == a.t2 {
                    RelationTier::MildlyNegative
                } else if n.t1 == a.t1 {
                    RelationTier::Negative
                } else {
                    RelationTier::StrictlyNegative
                };
                rel == tier
            })
            .map(|n| &n.t3)
            .collect())
    }

    /// Draws a label uniformly among those in `tier` relative to `anchor`.
    pub fn sample_label<R: Rng + ?Sized>(
        &self,
        tier: RelationTier,
        anchor: &LabelId,
        rng: &mut R,
    ) -> Result<LabelId> {
        let pool = self.eligible(tier, anchor)?;
        if pool.is_empty() {
            return Err(Error::TierExhausted {
                tier,
                anchor: anchor.to_string(),
            });
        }
        Ok(pool[pick(rng, pool.len())].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded;

    fn id(s: &str) -> LabelId {
        LabelId::from_name(s)
    }

    #[test]
    fn ids_from_names() {
        assert_eq!(id("Preserv. of Health").as_str(), "preserv_of_health");
        assert_eq!(id("Safety (Animals Items Nature)").as_str(), "safety_animals_items_nature");
        assert_eq!(id("  School Fees ").as_str(), "school_fees");
        assert_eq!(id("school_fees"), id("School Fees"));
    }

    #[test]
    fn parses_a_row() {
        let tax = Taxonomy::parse(
            "Emotional | Contentment | Aesthetics | Physical appearance of item or person which is pleasing to look at\n",
        )
        .unwrap();
        let n = tax.node(&id("aesthetics")).unwrap();
        assert_eq!(n.t1, id("emotional"));
        assert_eq!(n.t2, id("contentment"));
    }

    #[test]
    fn empty_stream_has_no_labels() {
        assert!(matches!(Taxonomy::parse(""), Err(Error::NoLabels)));
        assert!(matches!(Taxonomy::parse("# only a comment\n\n"), Err(Error::NoLabels)));
    }

    #[test]
    fn bundled_counts() {
        let tax = Taxonomy::bundled();
        assert_eq!(tax.t2_ids().len(), 17);
        assert_eq!(tax.t1_ids().len(), 6);
        assert_eq!(tax.len(), 57);
    }

    #[test]
    fn rejects_bad_rows() {
        let dup = "A | B | C | d\nA | B | c | e\n";
        assert!(matches!(Taxonomy::parse(dup), Err(Error::Parse { line: 2, .. })));
        let no_parent = "A |  | C | d\n";
        assert!(matches!(Taxonomy::parse(no_parent), Err(Error::Parse { line: 1, .. })));
        let no_desc = "# c\nA | B | C | \n";
        assert!(matches!(Taxonomy::parse(no_desc), Err(Error::Parse { line: 2, .. })));
        let short = "A | B | C\n";
        assert!(matches!(Taxonomy::parse(short), Err(Error::Parse { line: 1, .. })));
        let two_parents = "A | B | C | d\nX | B | E | f\n";
        assert!(matches!(Taxonomy::parse(two_parents), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn relation_examples() {
        let tax = Taxonomy::bundled();
        let r = |a: &str, b: &str| tax.relation(&id(a), &id(b)).unwrap();
        assert_eq!(r("aspiration", "reputation"), RelationTier::MildlyNegative);
        assert_eq!(r("aspiration", "dignity"), RelationTier::Negative);
        assert_eq!(r("aspiration", "aesthetics_items"), RelationTier::StrictlyNegative);
        assert_eq!(r("aspiration", "aspiration"), RelationTier::Positive);
        assert!(matches!(tax.relation(&id("aspiration"), &id("nope")), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn tier_mappings_are_monotone() {
        for tier in RelationTier::ALL {
            let [y3, y2, y1] = tier.targets();
            assert!(y3 <= y2 && y2 <= y1);
        }
        assert_eq!(RelationTier::Positive.targets(), [1, 1, 1]);
        assert_eq!(RelationTier::MildlyNegative.targets(), [0, 1, 1]);
        assert_eq!(RelationTier::Negative.targets(), [0, 0, 1]);
        assert_eq!(RelationTier::StrictlyNegative.targets(), [0, 0, 0]);
        assert_eq!(RelationTier::MildlyNegative.weight(), 0.5);
        assert_eq!(RelationTier::StrictlyNegative.weight(), 1.0);
    }

    #[test]
    fn sample_label_respects_tier() {
        let tax = Taxonomy::bundled();
        let mut rng = seeded(11);
        for _ in 0..50 {
            let l = tax.sample_label(RelationTier::MildlyNegative, &id("aspiration"), &mut rng).unwrap();
            assert!(l == id("modernisation") || l == id("reputation"));
        }
        let same = tax.sample_label(RelationTier::Positive, &id("faith"), &mut rng).unwrap();
        assert_eq!(same, id("faith"));
        let err = tax.sample_label(RelationTier::MildlyNegative, &id("faith"), &mut rng);
        assert!(matches!(err, Err(Error::TierExhausted { .. })));
    }

    /// 10,000 strictly-negative draws for `faith` are uniform over every label
    /// outside its pillar: each count within 3 sigma of the binomial mean and
    /// the chi-square statistic below the 0.999 quantile.
    #[test]
    fn strictly_negative_draws_are_uniform() {
        let tax = Taxonomy::bundled();
        let anchor = id("faith");
        let pool = tax.eligible(RelationTier::StrictlyNegative, &anchor).unwrap();
        let expected_pool: Vec<_> = tax.nodes().iter().filter(|n| n.t1 != id("indigenous")).collect();
        assert_eq!(pool.len(), expected_pool.len());

        let draws = 10_000usize;
        let mut counts: HashMap<LabelId, usize> = HashMap::new();
        let mut rng = seeded(2024);
        for _ in 0..draws {
            let l = tax.sample_label(RelationTier::StrictlyNegative, &anchor, &mut rng).unwrap();
            *counts.entry(l).or_default() += 1;
        }
        let k = pool.len() as f64;
        let p = 1.0 / k;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for l in &pool {
            let c = *counts.get(*l).unwrap_or(&0) as f64;
            assert!((c - mean).abs() <= 3.0 * sigma, "{l}: {c} vs {mean}±{sigma}");
            chi2 += (c - mean).powi(2) / mean;
        }
        assert_eq!(counts.len(), pool.len());
        // chi-square, 51 degrees of freedom, 0.999 quantile is about 87.97
        assert!(chi2 < 87.97, "chi2 = {chi2}");
    }

    #[test]
    fn text_round_trip() {
        let tax = Taxonomy::bundled();
        let again = Taxonomy::parse(&tax.to_text()).unwrap();
        assert_eq!(tax, again);
        assert_eq!(again.t2_ids(), tax.t2_ids());
    }
}
