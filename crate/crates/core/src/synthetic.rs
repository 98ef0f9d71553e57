//! Generator for the bundled demo world: a small disorder ontology made of
//! pseudo-words, its glossary, a word-substitution "translation", and the
//! STS / BCR / NEL / NLI benchmark files derived from it.
//!
//! Every leaf concept has a held-out alias that occurs in its definitions but
//! never among its names; the entity-linking mentions are built from those
//! aliases, so linking them requires knowledge absorbed from definitions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::eval::{NelDataset, NelRow, NliDataset, NliRow, PairDataset, PairRow};
use crate::io::write_atomic;
use crate::ontology::{
    Concept, Definition, DefinitionSource, GlossaryEntry, KnowledgeGraph, ParallelPair, Relation, RelationTemplate,
    IS_A,
};
use crate::rng;

pub const ONTOLOGY_FILE: &str = "ontology.jsonl";
pub const TEMPLATES_FILE: &str = "templates.tsv";
pub const GLOSSARY_FILE: &str = "glossary.jsonl";
pub const PARALLEL_FILE: &str = "parallel.tsv";
pub const STS_TRAIN_FILE: &str = "sts_train.tsv";
pub const STS_VAL_FILE: &str = "sts_val.tsv";
pub const STS_TEST_FILE: &str = "sts_test.tsv";
pub const BCR_FILE: &str = "bcr.tsv";
pub const NEL_FILE: &str = "nel.tsv";
pub const NEL_TRANSLATED_FILE: &str = "nel_translated.tsv";
pub const NLI_FILE: &str = "nli.tsv";

pub const ASSOCIATED_WITH: &str = "associated_with";

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub roots: usize,
    pub categories_per_root: usize,
    pub leaves_per_category: usize,
    pub features: usize,
    pub sts_train_pairs: usize,
    pub sts_val_pairs: usize,
    pub sts_test_pairs: usize,
    pub bcr_pairs: usize,
    pub nli_rows: usize,
    pub language: String,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 2023,
            roots: 4,
            categories_per_root: 4,
            leaves_per_category: 11,
            features: 32,
            sts_train_pairs: 600,
            sts_val_pairs: 150,
            sts_test_pairs: 300,
            bcr_pairs: 300,
            nli_rows: 120,
            language: "xx".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub concepts: Vec<Concept>,
    pub templates: Vec<RelationTemplate>,
    pub glossary: Vec<GlossaryEntry>,
    pub parallel: Vec<ParallelPair>,
    pub sts_train: PairDataset,
    pub sts_val: PairDataset,
    pub sts_test: PairDataset,
    pub bcr: PairDataset,
    pub nel: NelDataset,
    pub nel_translated: NelDataset,
    pub nli: NliDataset,
}

const SCAFFOLD: &[&str] = &[
    "a",
    "also",
    "and",
    "by",
    "called",
    "disease",
    "disorder",
    "examination",
    "form",
    "found",
    "has",
    "history",
    "in",
    "is",
    "kind",
    "marked",
    "of",
    "often",
    "on",
    "patient",
    "presents",
    "seen",
    "shows",
    "signs",
    "syndrome",
    "system",
    "that",
    "the",
    "was",
    "which",
    "with",
    "diagnosed",
    "no",
    "evidence",
    "for",
    "treated",
];

const FRAMES: &[&str] = &[
    "the patient has {X}",
    "the patient was diagnosed with {X}",
    "{X} was found on examination",
    "history of {X}",
    "the patient shows signs of {X}",
    "the patient was treated for {X}",
];

struct Words {
    rng: rng::Rng,
    used: BTreeSet<String>,
}

impl Words {
    fn new(seed: u64) -> Self {
        Self {
            rng: rng::seeded(seed),
            used: SCAFFOLD.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn fresh(&mut self) -> String {
        const ONSETS: &[&str] = &[
            "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gl", "kr", "pl", "st",
            "tr", "sk",
        ];
        const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
        const CODAS: &[&str] = &["", "", "", "n", "l", "r", "s", "x", "m"];
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).unwrap());
                w.push_str(VOWELS.choose(&mut self.rng).unwrap());
            }
            w.push_str(CODAS.choose(&mut self.rng).unwrap());
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

struct Leaf {
    id: String,
    root: usize,
    category: usize,
    head: String,
    synonym: String,
    alias: String,
    features: [usize; 2],
    associated: usize,
}

impl Leaf {
    fn name(&self, cat_word: &str) -> String {
        format!("{} {}", self.head, cat_word)
    }

    fn synonym_name(&self) -> String {
        format!("{} syndrome", self.synonym)
    }

    fn mention(&self, cat_word: &str) -> String {
        format!("{} {}", self.alias, cat_word)
    }
}

/// Relatedness of two leaves on a 0..5 scale.
fn relatedness(a: &Leaf, b: &Leaf, a_idx: usize, b_idx: usize) -> f64 {
    if a_idx == b_idx {
        return 5.0;
    }
    let shared = a.features.iter().filter(|f| b.features.contains(f)).count() as f64;
    let mut score = 0.4 * shared;
    if a.category == b.category {
        score += 3.0;
    } else if a.root == b.root {
        score += 1.6;
    }
    if a.associated == b_idx || b.associated == a_idx {
        score += 1.0;
    }
    score.min(4.6)
}

fn translate(lexicon: &BTreeMap<String, String>, text: &str) -> String {
    text.split(' ')
        .map(|w| lexicon[w].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

impl World {
    pub fn generate(cfg: &WorldConfig) -> Result<World> {
        if cfg.roots == 0 || cfg.categories_per_root == 0 || cfg.leaves_per_category < 2 || cfg.features < 2 {
            return Err(Error::Config(
                "synthetic world needs roots, categories, at least 2 leaves per category and 2 features".into(),
            ));
        }
        if cfg.roots * cfg.categories_per_root < 2 {
            return Err(Error::Config("synthetic world needs at least 2 categories".into()));
        }
        let mut words = Words::new(rng::derive(cfg.seed, 1));
        let mut r = rng::seeded(rng::derive(cfg.seed, 2));
        let mut next_id = 0usize;
        let mut new_id = || {
            next_id += 1;
            format!("C{next_id:04}")
        };

        let domain: Vec<String> = (0..cfg.roots).map(|_| words.fresh()).collect();
        let root_ids: Vec<String> = (0..cfg.roots).map(|_| new_id()).collect();
        let n_cat = cfg.roots * cfg.categories_per_root;
        let cat_words: Vec<String> = (0..n_cat).map(|_| words.fresh()).collect();
        let cat_ids: Vec<String> = (0..n_cat).map(|_| new_id()).collect();
        let feature_words: Vec<String> = (0..cfg.features).map(|_| words.fresh()).collect();

        let mut leaves = Vec::new();
        for cat in 0..n_cat {
            for _ in 0..cfg.leaves_per_category {
                let mut f = rand::seq::index::sample(&mut r, cfg.features, 2).into_vec();
                f.sort_unstable();
                leaves.push(Leaf {
                    id: new_id(),
                    root: cat / cfg.categories_per_root,
                    category: cat,
                    head: words.fresh(),
                    synonym: words.fresh(),
                    alias: words.fresh(),
                    features: [f[0], f[1]],
                    associated: 0,
                });
            }
        }
        // associate each leaf with a leaf of a sibling category under the same root
        let n_leaves = leaves.len();
        for i in 0..n_leaves {
            let candidates: Vec<usize> = (0..n_leaves)
                .filter(|&j| leaves[j].root == leaves[i].root && leaves[j].category != leaves[i].category)
                .collect();
            leaves[i].associated = match candidates.choose(&mut r) {
                Some(&j) => j,
                None => (i + cfg.leaves_per_category) % n_leaves,
            };
        }

        let human = |text: String| Definition {
            text,
            source: DefinitionSource::Human,
            language: "en".into(),
        };
        let mut concepts = Vec::new();
        let mut glossary = Vec::new();
        for (ri, d) in domain.iter().enumerate() {
            concepts.push(Concept {
                id: root_ids[ri].clone(),
                names: vec![format!("{d} disorder"), format!("{d} system disease")],
                semantic_type: "disease_or_syndrome".into(),
                parents: vec![],
                relations: vec![],
                definitions: vec![human(format!("a disorder of the {d} system"))],
            });
        }
        for (ci, cw) in cat_words.iter().enumerate() {
            let d = &domain[ci / cfg.categories_per_root];
            concepts.push(Concept {
                id: cat_ids[ci].clone(),
                names: vec![format!("{cw} {d} disorder"), format!("{cw} disease")],
                semantic_type: "disease_or_syndrome".into(),
                parents: vec![root_ids[ci / cfg.categories_per_root].clone()],
                relations: vec![],
                definitions: vec![human(format!(
                    "a kind of {d} disorder in which the {cw} system is affected"
                ))],
            });
            glossary.push(GlossaryEntry {
                id: cat_ids[ci].clone(),
                definition: format!("{cw} disease is a {d} disorder"),
                language: "en".into(),
            });
        }
        for leaf in &leaves {
            let cw = &cat_words[leaf.category];
            let d = &domain[leaf.root];
            let (f1, f2) = (&feature_words[leaf.features[0]], &feature_words[leaf.features[1]]);
            concepts.push(Concept {
                id: leaf.id.clone(),
                names: vec![leaf.name(cw), leaf.synonym_name()],
                semantic_type: "disease_or_syndrome".into(),
                parents: vec![cat_ids[leaf.category].clone()],
                relations: vec![Relation {
                    relation_type: ASSOCIATED_WITH.into(),
                    target: leaves[leaf.associated].id.clone(),
                }],
                definitions: vec![human(format!(
                    "a {cw} {d} disorder also called {} that presents with {f1} and {f2}",
                    leaf.alias
                ))],
            });
            glossary.push(GlossaryEntry {
                id: leaf.id.clone(),
                definition: format!("{} is a form of {cw} marked by {f1}", leaf.alias),
                language: "en".into(),
            });
        }
        let templates = vec![
            RelationTemplate::new(IS_A, "{SOURCE} is a kind of {TARGET}")?,
            RelationTemplate::new(ASSOCIATED_WITH, "{SOURCE} is often seen with {TARGET}")?,
        ];
        // validates structure
        KnowledgeGraph::from_concepts(concepts.clone())?;

        // word-level pseudo-translation
        let mut lexicon = BTreeMap::new();
        let mut vocabulary: BTreeSet<String> = SCAFFOLD.iter().map(|s| s.to_string()).collect();
        for c in &concepts {
            for text in c.names.iter().chain(c.definitions.iter().map(|d| &d.text)) {
                vocabulary.extend(text.split(' ').map(str::to_string));
            }
        }
        for g in &glossary {
            vocabulary.extend(g.definition.split(' ').map(str::to_string));
        }
        for f in FRAMES {
            vocabulary.extend(f.split(' ').filter(|w| *w != "{X}").map(str::to_string));
        }
        let mut foreign = Words::new(rng::derive(cfg.seed, 3));
        foreign.used.extend(vocabulary.iter().cloned());
        for w in &vocabulary {
            lexicon.insert(w.clone(), foreign.fresh());
        }
        let mut parallel = Vec::new();
        let mut push_pair = |text: &str| {
            parallel.push(ParallelPair {
                source_text: text.to_string(),
                target_text: translate(&lexicon, text),
                target_language: cfg.language.clone(),
            });
        };
        for w in &vocabulary {
            push_pair(w);
        }
        for c in &concepts {
            for n in &c.names {
                push_pair(n);
            }
            for d in &c.definitions {
                push_pair(&d.text);
            }
        }
        for g in &glossary {
            push_pair(&g.definition);
        }

        // entity linking on held-out aliases
        let nel_rows: Vec<NelRow> = leaves
            .iter()
            .map(|l| NelRow {
                mention: l.mention(&cat_words[l.category]),
                concept_id: l.id.clone(),
            })
            .collect();
        let nel_translated_rows = nel_rows
            .iter()
            .map(|row| NelRow {
                mention: translate(&lexicon, &row.mention),
                concept_id: row.concept_id.clone(),
            })
            .collect();

        // relatedness of concept names
        let mut bcr_rows = Vec::new();
        let mut seen = BTreeSet::new();
        let mut r_bcr = rng::seeded(rng::derive(cfg.seed, 4));
        while bcr_rows.len() < cfg.bcr_pairs {
            let i = r_bcr.gen_range(0..n_leaves);
            let j = pick_partner(&mut r_bcr, &leaves, i);
            if i == j || !seen.insert((i.min(j), i.max(j))) {
                continue;
            }
            let (a, b) = (&leaves[i], &leaves[j]);
            bcr_rows.push(PairRow {
                text_a: a.name(&cat_words[a.category]),
                text_b: b.name(&cat_words[b.category]),
                gold: relatedness(a, b, i, j),
            });
        }

        // sentence similarity over clinical-style frames
        let surfaces = |l: &Leaf| -> Vec<String> {
            let cw = &cat_words[l.category];
            vec![
                l.name(cw),
                l.synonym_name(),
                format!("{} {} with {}", cw, domain[l.root], feature_words[l.features[0]]),
            ]
        };
        let mut r_sts = rng::seeded(rng::derive(cfg.seed, 5));
        let total = cfg.sts_train_pairs + cfg.sts_val_pairs + cfg.sts_test_pairs;
        let mut sts_rows = Vec::with_capacity(total);
        let mut sts_seen = BTreeSet::new();
        while sts_rows.len() < total {
            let i = r_sts.gen_range(0..n_leaves);
            let j = if r_sts.gen_bool(0.3) {
                i
            } else {
                pick_partner(&mut r_sts, &leaves, i)
            };
            let si = r_sts.gen_range(0..3);
            let sj = r_sts.gen_range(0..3);
            let fi = r_sts.gen_range(0..FRAMES.len());
            let fj = r_sts.gen_range(0..FRAMES.len());
            if i == j && si == sj {
                continue;
            }
            if !sts_seen.insert((i, j, si, sj, fi, fj)) {
                continue;
            }
            let text_a = FRAMES[fi].replace("{X}", &surfaces(&leaves[i])[si]);
            let text_b = FRAMES[fj].replace("{X}", &surfaces(&leaves[j])[sj]);
            let mut gold = relatedness(&leaves[i], &leaves[j], i, j);
            if fi != fj {
                gold -= 0.4;
            }
            gold += r_sts.gen_range(-0.2..0.2);
            sts_rows.push(PairRow {
                text_a,
                text_b,
                gold: (gold.clamp(0.0, 5.0) * 100.0).round() / 100.0,
            });
        }
        let sts_test = sts_rows.split_off(cfg.sts_train_pairs + cfg.sts_val_pairs);
        let sts_val = sts_rows.split_off(cfg.sts_train_pairs);

        // anchor / hypernym paraphrase / unrelated disorder
        let mut r_nli = rng::seeded(rng::derive(cfg.seed, 6));
        let mut nli_rows = Vec::with_capacity(cfg.nli_rows);
        for _ in 0..cfg.nli_rows {
            let i = r_nli.gen_range(0..n_leaves);
            let l = &leaves[i];
            let others: Vec<&Leaf> = leaves.iter().filter(|o| o.root != l.root).collect();
            let o = others
                .choose(&mut r_nli)
                .copied()
                .unwrap_or(&leaves[(i + 1) % n_leaves]);
            let frame = FRAMES.choose(&mut r_nli).unwrap();
            let cw = &cat_words[l.category];
            nli_rows.push(NliRow {
                anchor: frame.replace("{X}", &l.name(cw)),
                entailed: frame.replace("{X}", &format!("a {cw} {} disorder", domain[l.root])),
                contradicted: frame.replace("{X}", &o.name(&cat_words[o.category])),
            });
        }

        Ok(World {
            concepts,
            templates,
            glossary,
            parallel,
            sts_train: PairDataset::new("sts_train", sts_rows),
            sts_val: PairDataset::new("sts_val", sts_val),
            sts_test: PairDataset::new("sts_test", sts_test),
            bcr: PairDataset::new("bcr", bcr_rows),
            nel: NelDataset::new("nel", nel_rows),
            nel_translated: NelDataset::new("nel_translated", nel_translated_rows),
            nli: NliDataset::new("nli", nli_rows)?,
        })
    }

    pub fn knowledge_graph(&self) -> Result<KnowledgeGraph> {
        Ok(KnowledgeGraph::from_concepts(self.concepts.clone())?.with_templates(self.templates.clone()))
    }

    /// Writes every fixture file into `dir`, returning the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let kg = KnowledgeGraph::from_concepts(self.concepts.clone())?;
        let mut templates = String::new();
        for t in &self.templates {
            templates.push_str(&format!("{}\t{}\n", t.relation_type, t.template));
        }
        let mut glossary = String::new();
        for g in &self.glossary {
            glossary.push_str(&serde_json::to_string(g).expect("glossary entry serializes"));
            glossary.push('\n');
        }
        let mut parallel = String::new();
        for p in &self.parallel {
            parallel.push_str(&format!(
                "{}\t{}\t{}\n",
                p.source_text, p.target_text, p.target_language
            ));
        }
        let files = [
            (ONTOLOGY_FILE, kg.to_jsonl()),
            (TEMPLATES_FILE, templates),
            (GLOSSARY_FILE, glossary),
            (PARALLEL_FILE, parallel),
            (STS_TRAIN_FILE, self.sts_train.to_tsv()),
            (STS_VAL_FILE, self.sts_val.to_tsv()),
            (STS_TEST_FILE, self.sts_test.to_tsv()),
            (BCR_FILE, self.bcr.to_tsv()),
            (NEL_FILE, self.nel.to_tsv()),
            (NEL_TRANSLATED_FILE, self.nel_translated.to_tsv()),
            (NLI_FILE, self.nli.to_tsv()),
        ];
        let mut out = Vec::new();
        for (name, content) in files {
            let path = dir.join(name);
            write_atomic(&path, content.as_bytes())?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Partner leaf for pair sampling, stratified over sibling / same-root /
/// associated / unrelated.
fn pick_partner(r: &mut rng::Rng, leaves: &[Leaf], i: usize) -> usize {
    let l = &leaves[i];
    let pool: Vec<usize> = match r.gen_range(0..10) {
        0..=2 => (0..leaves.len())
            .filter(|&j| j != i && leaves[j].category == l.category)
            .collect(),
        3..=4 => (0..leaves.len())
            .filter(|&j| leaves[j].root == l.root && leaves[j].category != l.category)
            .collect(),
        5 => vec![l.associated],
        _ => (0..leaves.len()).filter(|&j| leaves[j].root != l.root).collect(),
    };
    pool.choose(r).copied().unwrap_or((i + 1) % leaves.len())
}
