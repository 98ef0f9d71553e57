//! Knowledge graphs, glossaries and relation templates, and the textual
//! training material derived from them.
//!
//! A [`KnowledgeGraph`] is loaded from JSONL (one concept per line) and is
//! immutable once validated, apart from glossary merges which only append
//! definitions. Concepts are stored in ascending id order, which fixes the
//! iteration order of every derived corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, tsv_rows};
use crate::rng;

/// Relation type reserved for is-a (parent) edges.
pub const IS_A: &str = "is_a";

fn default_language() -> String {
    "en".to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefinitionSource {
    /// Curated definition shipped with the ontology.
    Human,
    /// Definition ingested from a glossary file.
    Generated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Definition {
    pub text: String,
    pub source: DefinitionSource,
    #[serde(default = "default_language")]
    pub language: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    #[serde(rename = "type")]
    pub relation_type: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub names: Vec<String>,
    #[serde(default)]
    pub semantic_type: String,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default)]
    pub definitions: Vec<Definition>,
}

impl Concept {
    pub fn canonical_name(&self) -> &str {
        &self.names[0]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTemplate {
    pub relation_type: String,
    pub template: String,
}

impl RelationTemplate {
    pub const SOURCE: &'static str = "{SOURCE}";
    pub const TARGET: &'static str = "{TARGET}";

    pub fn new(relation_type: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let relation_type = relation_type.into();
        let template = template.into();
        if relation_type.trim().is_empty() {
            return Err(Error::Validation("template with empty relation type".into()));
        }
        for placeholder in [Self::SOURCE, Self::TARGET] {
            let count = template.matches(placeholder).count();
            if count != 1 {
                return Err(Error::Validation(format!(
                    "template for {relation_type:?} must contain {placeholder} exactly once (found {count})"
                )));
            }
        }
        Ok(Self {
            relation_type,
            template,
        })
    }

    pub fn render(&self, source: &str, target: &str) -> String {
        self.template
            .replace(Self::SOURCE, source)
            .replace(Self::TARGET, target)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionKind {
    Name,
    HumanDefinition,
    GeneratedDefinition,
    TemplatedDescription,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub concept_id: String,
    pub text: String,
    pub kind: DescriptionKind,
    pub language: String,
}

impl Description {
    fn name(concept_id: &str, text: &str) -> Self {
        Self {
            concept_id: concept_id.to_string(),
            text: text.to_string(),
            kind: DescriptionKind::Name,
            language: default_language(),
        }
    }

    fn definition(concept_id: &str, def: &Definition) -> Self {
        Self {
            concept_id: concept_id.to_string(),
            text: def.text.clone(),
            kind: match def.source {
                DefinitionSource::Human => DescriptionKind::HumanDefinition,
                DefinitionSource::Generated => DescriptionKind::GeneratedDefinition,
            },
            language: def.language.clone(),
        }
    }
}

/// A name (anchor) and one of its non-name descriptions (positive).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub anchor: Description,
    pub positive: Description,
}

impl TrainingPair {
    pub fn concept_id(&self) -> &str {
        &self.anchor.concept_id
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source_text: String,
    pub target_text: String,
    pub target_language: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GlossaryMerge {
    pub merged: usize,
    /// Glossary ids with no matching concept, in file order.
    pub skipped: Vec<String>,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    concepts: BTreeMap<String, Concept>,
    children: BTreeMap<String, BTreeSet<String>>,
    templates: BTreeMap<String, RelationTemplate>,
}

impl KnowledgeGraph {
    /// Validates and indexes a set of concepts.
    pub fn from_concepts(concepts: impl IntoIterator<Item = Concept>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in concepts {
            if c.id.trim().is_empty() {
                return Err(Error::Validation("concept with empty id".into()));
            }
            if c.names.is_empty() {
                return Err(Error::Validation(format!("concept {:?} has no names", c.id)));
            }
            if c.names.iter().any(|n| n.trim().is_empty()) {
                return Err(Error::Validation(format!("concept {:?} has an empty name", c.id)));
            }
            if c.definitions.iter().any(|d| d.text.trim().is_empty()) {
                return Err(Error::Validation(format!("concept {:?} has an empty definition", c.id)));
            }
            if map.contains_key(&c.id) {
                return Err(Error::Validation(format!("duplicate concept id {:?}", c.id)));
            }
            map.insert(c.id.clone(), c);
        }

        for c in map.values() {
            let targets = c.parents.iter().chain(c.relations.iter().map(|r| &r.target));
            for t in targets {
                if !map.contains_key(t) {
                    return Err(Error::Validation(format!(
                        "concept {:?} references unknown id {t:?}",
                        c.id
                    )));
                }
            }
        }

        if let Some(cycle) = find_isa_cycle(&map) {
            return Err(Error::Cycle(cycle));
        }

        let mut children: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in map.values() {
            for p in &c.parents {
                children.entry(p.clone()).or_default().insert(c.id.clone());
            }
        }

        Ok(Self {
            concepts: map,
            children,
            templates: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn concept(&self, id: &str) -> Result<&Concept> {
        self.get(id).ok_or_else(|| Error::UnknownConcept(id.to_string()))
    }

    /// Concepts in ascending id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn children(&self, id: &str) -> impl Iterator<Item = &str> {
        self.children
            .get(id)
            .into_iter()
            .flat_map(|set| set.iter().map(String::as_str))
    }

    pub fn templates(&self) -> impl Iterator<Item = &RelationTemplate> {
        self.templates.values()
    }

    pub fn template(&self, relation_type: &str) -> Option<&RelationTemplate> {
        self.templates.get(relation_type)
    }

    pub fn add_template(&mut self, template: RelationTemplate) {
        self.templates.insert(template.relation_type.clone(), template);
    }

    pub fn with_templates(mut self, templates: impl IntoIterator<Item = RelationTemplate>) -> Self {
        for t in templates {
            self.add_template(t);
        }
        self
    }

    /// All transitive is-a ancestors of `id` (excluding `id`).
    pub fn ancestors(&self, id: &str) -> Result<BTreeSet<String>> {
        let concept = self.concept(id)?;
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = concept.parents.iter().map(String::as_str).collect();
        while let Some(p) = stack.pop() {
            if seen.insert(p.to_string()) {
                stack.extend(self.concepts[p].parents.iter().map(String::as_str));
            }
        }
        Ok(seen)
    }

    /// Appends glossary entries as generated definitions. Entries for unknown
    /// ids are skipped and reported. Running this twice appends twice.
    pub fn merge_glossary_entries(&mut self, entries: impl IntoIterator<Item = GlossaryEntry>) -> GlossaryMerge {
        let mut report = GlossaryMerge::default();
        for entry in entries {
            match self.concepts.get_mut(&entry.id) {
                Some(c) => {
                    c.definitions.push(Definition {
                        text: entry.definition,
                        source: DefinitionSource::Generated,
                        language: entry.language,
                    });
                    report.merged += 1;
                }
                None => report.skipped.push(entry.id),
            }
        }
        report
    }

    /// Parses a glossary file and merges it. A parse error leaves the graph untouched.
    pub fn merge_glossary(&mut self, path: &Path) -> Result<GlossaryMerge> {
        let entries = load_glossary(path)?;
        let report = self.merge_glossary_entries(entries);
        if !report.skipped.is_empty() {
            log::warn!(
                "{}: skipped {} glossary entries for unknown concept ids",
                path.display(),
                report.skipped.len()
            );
        }
        Ok(report)
    }

    /// (relation type, target id) edges of a concept that have a template,
    /// parents first (as [`IS_A`]) followed by typed relations.
    fn templated_edges<'a>(&'a self, concept: &'a Concept) -> Vec<(&'a RelationTemplate, &'a str)> {
        let parents = concept.parents.iter().map(|p| (IS_A, p.as_str()));
        let relations = concept
            .relations
            .iter()
            .map(|r| (r.relation_type.as_str(), r.target.as_str()));
        parents
            .chain(relations)
            .filter_map(|(ty, target)| self.template(ty).map(|t| (t, target)))
            .collect()
    }

    fn render_edge(&self, concept: &Concept, template: &RelationTemplate, target: &str) -> Description {
        Description {
            concept_id: concept.id.clone(),
            text: template.render(concept.canonical_name(), self.concepts[target].canonical_name()),
            kind: DescriptionKind::TemplatedDescription,
            language: default_language(),
        }
    }

    /// Every templated description of a concept, in edge order.
    pub fn all_verbalizations(&self, concept_id: &str) -> Result<Vec<Description>> {
        let concept = self.concept(concept_id)?;
        Ok(self
            .templated_edges(concept)
            .into_iter()
            .map(|(t, target)| self.render_edge(concept, t, target))
            .collect())
    }

    /// Samples up to `max_count` templated descriptions of a concept, uniformly
    /// without replacement. The output keeps edge order.
    pub fn verbalize_relations(&self, concept_id: &str, max_count: usize, seed: u64) -> Result<Vec<Description>> {
        if max_count == 0 {
            return Err(Error::Precondition("max_count must be positive".into()));
        }
        let concept = self.concept(concept_id)?;
        let edges = self.templated_edges(concept);
        let picked: Vec<usize> = if edges.len() <= max_count {
            (0..edges.len()).collect()
        } else {
            let mut r = rng::seeded(seed);
            let mut idx = index::sample(&mut r, edges.len(), max_count).into_vec();
            idx.sort_unstable();
            idx
        };
        Ok(picked
            .into_iter()
            .map(|i| self.render_edge(concept, edges[i].0, edges[i].1))
            .collect())
    }

    /// Every textual variant of a concept: names, definitions, and all
    /// templated descriptions.
    pub fn descriptions(&self, concept_id: &str) -> Result<Vec<Description>> {
        let c = self.concept(concept_id)?;
        let mut out: Vec<Description> = c.names.iter().map(|n| Description::name(&c.id, n)).collect();
        out.extend(c.definitions.iter().map(|d| Description::definition(&c.id, d)));
        out.extend(self.all_verbalizations(concept_id)?);
        Ok(out)
    }

    /// The single definition used to build a concept's distillation target:
    /// first human definition, else first generated one, else the first
    /// templated verbalization, else the canonical name.
    pub fn canonical_definition(&self, concept_id: &str) -> Result<String> {
        let c = self.concept(concept_id)?;
        for source in [DefinitionSource::Human, DefinitionSource::Generated] {
            if let Some(d) = c.definitions.iter().find(|d| d.source == source) {
                return Ok(d.text.clone());
            }
        }
        if let Some((t, target)) = self.templated_edges(c).into_iter().next() {
            return Ok(self.render_edge(c, t, target).text);
        }
        Ok(c.canonical_name().to_string())
    }

    /// Name x definition pairs for every concept, plus each name paired with up to
    /// `per_concept_templated` sampled templated descriptions.
    pub fn build_corpus(&self, per_concept_templated: usize, seed: u64) -> Vec<TrainingPair> {
        let mut pairs = Vec::new();
        for (ci, c) in self.concepts.values().enumerate() {
            let mut positives: Vec<Description> = c
                .definitions
                .iter()
                .map(|d| Description::definition(&c.id, d))
                .collect();
            if per_concept_templated > 0 {
                let sampled = self
                    .verbalize_relations(&c.id, per_concept_templated, rng::derive(seed, ci as u64))
                    .expect("concept id comes from the graph");
                positives.extend(sampled);
            }
            for name in &c.names {
                let anchor = Description::name(&c.id, name);
                for p in &positives {
                    pairs.push(TrainingPair {
                        anchor: anchor.clone(),
                        positive: p.clone(),
                    });
                }
            }
        }
        pairs
    }

    /// Hard-negative candidates: children of any ancestor, minus the concept
    /// and its ancestors. Returns `min(n, pool)` ids sampled uniformly, in id order.
    pub fn sample_hard_negatives(&self, concept_id: &str, n: usize, seed: u64) -> Result<Vec<String>> {
        let pool = self.hard_negative_pool(concept_id)?;
        if n >= pool.len() {
            return Ok(pool.into_iter().collect());
        }
        let pool: Vec<String> = pool.into_iter().collect();
        let mut r = rng::seeded(seed);
        let mut idx = index::sample(&mut r, pool.len(), n).into_vec();
        idx.sort_unstable();
        Ok(idx.into_iter().map(|i| pool[i].clone()).collect())
    }

    pub fn hard_negative_pool(&self, concept_id: &str) -> Result<BTreeSet<String>> {
        let ancestors = self.ancestors(concept_id)?;
        let mut pool = BTreeSet::new();
        for a in &ancestors {
            for child in self.children(a) {
                if child != concept_id && !ancestors.contains(child) {
                    pool.insert(child.to_string());
                }
            }
        }
        Ok(pool)
    }

    /// Serializes the concepts back to JSONL, in id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in self.concepts.values() {
            out.push_str(&serde_json::to_string(c).expect("concept serializes"));
            out.push('\n');
        }
        out
    }
}

fn find_isa_cycle(concepts: &BTreeMap<String, Concept>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = concepts.keys().map(|k| (k.as_str(), Mark::Fresh)).collect();

    for root in concepts.keys() {
        if marks[root.as_str()] != Mark::Fresh {
            continue;
        }
        // iterative DFS: (node, next parent index)
        let mut path: Vec<(&str, usize)> = vec![(root.as_str(), 0)];
        marks.insert(root.as_str(), Mark::Active);
        while let Some(&mut (node, ref mut next)) = path.last_mut() {
            let parents = &concepts[node].parents;
            if *next < parents.len() {
                let p = parents[*next].as_str();
                *next += 1;
                match marks[p] {
                    Mark::Fresh => {
                        marks.insert(p, Mark::Active);
                        path.push((p, 0));
                    }
                    Mark::Active => {
                        let start = path.iter().position(|(n, _)| *n == p).expect("active node on path");
                        let mut cycle: Vec<String> = path[start..].iter().map(|(n, _)| n.to_string()).collect();
                        cycle.push(p.to_string());
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                marks.insert(node, Mark::Done);
                path.pop();
            }
        }
    }
    None
}

pub fn parse_ontology(path: &Path, content: &str) -> Result<KnowledgeGraph> {
    let mut concepts = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let concept: Concept = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        concepts.push(concept);
    }
    KnowledgeGraph::from_concepts(concepts)
}

/// Loads an ontology JSONL file (one concept object per line).
pub fn load_ontology(path: &Path) -> Result<KnowledgeGraph> {
    parse_ontology(path, &read_to_string(path)?)
}

/// Loads a `relation_type \t template` TSV file.
pub fn load_templates(path: &Path) -> Result<Vec<RelationTemplate>> {
    let content = read_to_string(path)?;
    let mut out = Vec::new();
    for (line, fields) in tsv_rows(&content) {
        if fields.len() != 2 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 2 columns, found {}", fields.len()),
            ));
        }
        let t = RelationTemplate::new(fields[0], fields[1]).map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossaryEntry {
    pub id: String,
    pub definition: String,
    #[serde(default = "default_language")]
    pub language: String,
}

pub fn load_glossary(path: &Path) -> Result<Vec<GlossaryEntry>> {
    let content = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: GlossaryEntry = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if entry.definition.trim().is_empty() {
            return Err(Error::parse(path, i + 1, "empty definition"));
        }
        out.push(entry);
    }
    Ok(out)
}

/// Loads a `source_text \t target_text \t language` TSV file.
pub fn load_parallel_pairs(path: &Path) -> Result<Vec<ParallelPair>> {
    let content = read_to_string(path)?;
    let mut out = Vec::new();
    for (line, fields) in tsv_rows(&content) {
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 3 columns, found {}", fields.len()),
            ));
        }
        if let Some(col) = fields.iter().position(|f| f.trim().is_empty()) {
            return Err(Error::parse(path, line, format!("empty field in column {}", col + 1)));
        }
        out.push(ParallelPair {
            source_text: fields[0].to_string(),
            target_text: fields[1].to_string(),
            target_language: fields[2].to_string(),
        });
    }
    let counts = language_counts(&out);
    for (lang, n) in &counts {
        log::info!("{}: {n} pairs for language {lang}", path.display());
    }
    Ok(out)
}

pub fn language_counts(pairs: &[ParallelPair]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.target_language.clone()).or_insert(0) += 1;
    }
    counts
}

pub fn corpus_to_jsonl(pairs: &[TrainingPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn load_corpus(path: &Path) -> Result<Vec<TrainingPair>> {
    let content = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: TrainingPair = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if pair.anchor.concept_id != pair.positive.concept_id {
            return Err(Error::parse(
                path,
                i + 1,
                "anchor and positive belong to different concepts",
            ));
        }
        out.push(pair);
    }
    Ok(out)
}
