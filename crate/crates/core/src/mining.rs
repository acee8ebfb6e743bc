//! Query structures (TS) and frequent query substructures (FS*) of a
//! training set.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};
use crate::graph::{
    canonical_key, is_substructure, structure_of, triples_connected, QueryGraph, StructureKey,
};

/// Largest query whose triple subsets are enumerated exhaustively.
pub const MAX_ENUMERATION_TRIPLES: usize = 12;

pub const CATALOG_VERSION: u32 = 1;

/// An annotated entity mention: a byte range of the question text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub surface: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub id: String,
    pub question: String,
    pub query: QueryGraph,
    #[serde(default)]
    pub mentions: Vec<Mention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub key: StructureKey,
    pub representative: QueryGraph,
    pub count: usize,
}

/// TS and FS* with their counts and the TS x FS* containment matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstructureCatalog {
    pub version: u32,
    pub gamma: usize,
    /// TS, sorted by key. `count` is the number of training queries with
    /// that structure.
    pub structures: Vec<CatalogEntry>,
    /// Every connected substructure seen, sorted by key. `count` is the
    /// number of training queries containing it.
    pub substructures: Vec<CatalogEntry>,
    /// Indices into `substructures` of the members of FS* (count > gamma).
    pub frequent: Vec<usize>,
    /// `(i, j)`: structure `i` contains frequent substructure `frequent[j]`.
    pub containment: Vec<(usize, usize)>,
}

/// Groups queries by structure. Representatives are canonical relabelings of
/// the first query seen with each key.
pub fn collect_structures(pairs: &[TrainingPair]) -> BTreeMap<StructureKey, (QueryGraph, usize)> {
    let mut out: BTreeMap<StructureKey, (QueryGraph, usize)> = BTreeMap::new();
    let keyed: Vec<(StructureKey, &QueryGraph)> =
        pairs.par_iter().map(|p| (canonical_key(&p.query), &p.query)).collect();
    for (key, query) in keyed {
        out.entry(key).or_insert_with(|| (structure_of(query), 0)).1 += 1;
    }
    out
}

/// One representative per structure among the connected non-empty triple
/// subsets of `g`, `g` itself included. Representatives carry no target.
pub fn enumerate_substructures(g: &QueryGraph) -> Result<Vec<QueryGraph>> {
    Ok(substructure_map(g)?.into_values().collect())
}

fn substructure_map(g: &QueryGraph) -> Result<BTreeMap<StructureKey, QueryGraph>> {
    let n = g.triple_count();
    if n > MAX_ENUMERATION_TRIPLES {
        return Err(Error::TooManyTriples(n, MAX_ENUMERATION_TRIPLES));
    }
    let mut out = BTreeMap::new();
    let mut subset = Vec::with_capacity(n);
    for mask in 1u32..(1u32 << n) {
        subset.clear();
        subset.extend((0..n).filter(|i| mask & (1 << i) != 0));
        if !triples_connected(g.triples(), &subset) {
            continue;
        }
        let sub = g.subgraph(&subset)?.with_target(None)?;
        let key = canonical_key(&sub);
        out.entry(key).or_insert_with(|| structure_of(&sub));
    }
    Ok(out)
}

/// Mines TS and FS* = {S* : more than `gamma` training queries contain S*}.
pub fn mine(pairs: &[TrainingPair], gamma: usize) -> Result<SubstructureCatalog> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingData);
    }
    let structures: Vec<CatalogEntry> = collect_structures(pairs)
        .into_iter()
        .map(|(key, (representative, count))| CatalogEntry { key, representative, count })
        .collect();

    let per_query: Vec<BTreeMap<StructureKey, QueryGraph>> =
        pairs.par_iter().map(|p| substructure_map(&p.query)).collect::<Result<_>>()?;
    let mut tally: BTreeMap<StructureKey, (QueryGraph, usize)> = BTreeMap::new();
    for subs in per_query {
        for (key, rep) in subs {
            tally.entry(key).or_insert((rep, 0)).1 += 1;
        }
    }
    let substructures: Vec<CatalogEntry> = tally
        .into_iter()
        .map(|(key, (representative, count))| CatalogEntry { key, representative, count })
        .collect();
    let frequent: Vec<usize> =
        (0..substructures.len()).filter(|&i| substructures[i].count > gamma).collect();

    let mut catalog = SubstructureCatalog {
        version: CATALOG_VERSION,
        gamma,
        structures,
        substructures,
        frequent,
        containment: Vec::new(),
    };
    let rows: Vec<Vec<bool>> = catalog
        .structures
        .par_iter()
        .map(|s| catalog.containment_of(&s.representative))
        .collect();
    catalog.containment = rows
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter(|(_, &b)| b).map(move |(j, _)| (i, j)))
        .collect();
    log::info!(
        "mined {} structures, {} substructures, {} frequent (gamma = {gamma})",
        catalog.structures.len(),
        catalog.substructures.len(),
        catalog.frequent.len()
    );
    Ok(catalog)
}

impl SubstructureCatalog {
    /// FS* in catalog order.
    pub fn frequent_entries(&self) -> impl ExactSizeIterator<Item = &CatalogEntry> + '_ {
        self.frequent.iter().map(|&i| &self.substructures[i])
    }

    pub fn frequent_keys(&self) -> Vec<StructureKey> {
        self.frequent_entries().map(|e| e.key.clone()).collect()
    }

    /// FS* restricted to a threshold above the mined one.
    pub fn with_gamma(&self, gamma: usize) -> Result<SubstructureCatalog> {
        if gamma < self.gamma {
            return Err(Error::Config(format!(
                "cannot lower gamma from {} to {gamma} without re-mining",
                self.gamma
            )));
        }
        let mut out = self.clone();
        let keep: Vec<usize> =
            self.frequent.iter().copied().filter(|&i| self.substructures[i].count > gamma).collect();
        let remap: HashMap<usize, usize> = self
            .frequent
            .iter()
            .enumerate()
            .filter_map(|(j, i)| keep.iter().position(|k| k == i).map(|nj| (j, nj)))
            .collect();
        out.gamma = gamma;
        out.frequent = keep;
        out.containment = self
            .containment
            .iter()
            .filter_map(|&(i, j)| remap.get(&j).map(|&nj| (i, nj)))
            .collect();
        Ok(out)
    }

    pub fn structure_index(&self, key: &StructureKey) -> Option<usize> {
        self.structures.binary_search_by(|e| e.key.cmp(key)).ok()
    }

    pub fn substructure_index(&self, key: &StructureKey) -> Option<usize> {
        self.substructures.binary_search_by(|e| e.key.cmp(key)).ok()
    }

    /// Containment bit vector of structure `i` of TS over FS*.
    pub fn containment_row(&self, i: usize) -> Vec<bool> {
        let mut row = vec![false; self.frequent.len()];
        let start = self.containment.partition_point(|&(r, _)| r < i);
        for &(r, j) in &self.containment[start..] {
            if r != i {
                break;
            }
            row[j] = true;
        }
        row
    }

    /// Containment bit vector of an arbitrary structure over FS*.
    pub fn containment_of(&self, s: &QueryGraph) -> Vec<bool> {
        self.frequent_entries()
            .map(|f| f.key.triple_count <= s.triple_count() && is_substructure(&f.representative, s))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<SubstructureCatalog> {
        let catalog: SubstructureCatalog = serde_json::from_str(&read_file(path)?)?;
        if catalog.version != CATALOG_VERSION {
            return Err(Error::Config(format!(
                "catalog version {} is not supported (expected {CATALOG_VERSION})",
                catalog.version
            )));
        }
        Ok(catalog)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_query;

    fn pair(id: usize, sparql: &str) -> TrainingPair {
        TrainingPair {
            id: id.to_string(),
            question: String::new(),
            query: parse_query(sparql).unwrap(),
            mentions: vec![],
        }
    }

    #[test]
    fn renamed_queries_share_a_structure() {
        let pairs = vec![
            pair(0, "SELECT ?x WHERE { ?x :director :Burton }"),
            pair(1, "SELECT ?film WHERE { ?film :starring :Depp }"),
        ];
        let ts = collect_structures(&pairs);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts.values().next().unwrap().1, 2);
    }

    #[test]
    fn figure_query_contains_count_isa() {
        let g = parse_query("SELECT (COUNT(?u) AS ?c) WHERE { ?u a :Film . ?u :director :Burton }").unwrap();
        let subs = enumerate_substructures(&g).unwrap();
        // 3 singles, 3 pairs (all share ?u), the whole query.
        assert_eq!(subs.len(), 7);
        let count_isa = parse_query("SELECT ?c WHERE { ?u a :Film . ?u qg:count ?c }").unwrap();
        let key = canonical_key(&count_isa);
        assert!(subs.iter().any(|s| canonical_key(s) == key));
    }

    #[test]
    fn counts_are_per_query_and_strict() {
        let pairs: Vec<_> = (0..3)
            .map(|i| pair(i, "SELECT ?x WHERE { ?x :p :A . ?x :p :B }"))
            .chain([pair(3, "SELECT ?x WHERE { ?x :p :A }")])
            .collect();
        let cat = mine(&pairs, 3).unwrap();
        let single = cat.substructures.iter().find(|e| e.key.triple_count == 1).unwrap();
        // The 2-star contains the single triple twice but counts once.
        assert_eq!(single.count, 4);
        assert_eq!(cat.frequent.len(), 1);
        assert_eq!(mine(&pairs, 4).unwrap().frequent.len(), 0);
        assert!(matches!(mine(&[], 0), Err(Error::EmptyTrainingData)));
    }

    #[test]
    fn containment_rows_match_direct_check() {
        let pairs = vec![
            pair(0, "SELECT ?x WHERE { ?x :p :A . ?x a :C }"),
            pair(1, "SELECT ?x WHERE { ?x :p :A }"),
            pair(2, "SELECT ?x WHERE { :A :p ?x }"),
        ];
        let cat = mine(&pairs, 0).unwrap();
        for (i, s) in cat.structures.iter().enumerate() {
            assert_eq!(cat.containment_row(i), cat.containment_of(&s.representative));
        }
        let higher = cat.with_gamma(1).unwrap();
        assert_eq!(higher.frequent.len(), 1);
        for i in 0..higher.structures.len() {
            assert_eq!(higher.containment_row(i), higher.containment_of(&higher.structures[i].representative));
        }
    }
}
