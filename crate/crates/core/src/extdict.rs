//! External dictionaries and matching-dependency evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::constraints::{similarity, MatchOp, MatchingDependency};
use crate::dataset::{canonicalize, CellRef, DataError, Dataset};

#[derive(Debug, Error)]
pub enum DictError {
    #[error("dictionary {0:?} is already loaded")]
    DuplicateId(String),
    #[error("unknown dictionary {0:?}")]
    UnknownDict(String),
    #[error("dictionary {dict:?} has no attribute {attr:?}")]
    UnknownDictAttribute { dict: String, attr: String },
    #[error("dictionary {dict:?}: duplicate attribute {attr:?}")]
    DuplicateAttribute { dict: String, attr: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtDict {
    pub id: String,
    pub attributes: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl ExtDict {
    pub fn from_reader<R: Read>(id: &str, reader: R) -> Result<Self, DictError> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(reader);
        let attributes: Vec<String> = rdr
            .headers()
            .map_err(DataError::from)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if attributes.is_empty() || attributes.iter().all(String::is_empty) {
            log::warn!("dictionary {id:?} is empty");
            return Ok(ExtDict {
                id: id.to_string(),
                attributes: Vec::new(),
                rows: Vec::new(),
            });
        }
        let mut seen = BTreeSet::new();
        for a in &attributes {
            if !seen.insert(a) {
                return Err(DictError::DuplicateAttribute {
                    dict: id.to_string(),
                    attr: a.clone(),
                });
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(DataError::from)?;
            if rec.len() != attributes.len() {
                return Err(DataError::RaggedRow {
                    line: rec.position().map_or(0, |p| p.line()),
                    expected: attributes.len(),
                    found: rec.len(),
                }
                .into());
            }
            rows.push(rec.iter().map(canonicalize).collect());
        }
        if rows.is_empty() {
            log::warn!("dictionary {id:?} has no rows");
        }
        Ok(ExtDict {
            id: id.to_string(),
            attributes,
            rows,
        })
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize, DictError> {
        self.attributes
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| DictError::UnknownDictAttribute {
                dict: self.id.clone(),
                attr: name.to_string(),
            })
    }

    pub fn contains_value(&self, value: &str) -> bool {
        self.rows.iter().flatten().any(|v| v.as_deref() == Some(value))
    }
}

#[derive(Debug, Clone, Default)]
pub struct DictRegistry {
    dicts: BTreeMap<String, ExtDict>,
}

impl DictRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dict: ExtDict) -> Result<(), DictError> {
        if self.dicts.contains_key(&dict.id) {
            return Err(DictError::DuplicateId(dict.id));
        }
        self.dicts.insert(dict.id.clone(), dict);
        Ok(())
    }

    pub fn load_dict(&mut self, path: impl AsRef<Path>, id: &str) -> Result<&ExtDict, DictError> {
        if self.dicts.contains_key(id) {
            return Err(DictError::DuplicateId(id.to_string()));
        }
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.insert(ExtDict::from_reader(id, file)?)?;
        Ok(&self.dicts[id])
    }

    pub fn get(&self, id: &str) -> Option<&ExtDict> {
        self.dicts.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.dicts.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.dicts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MatchedFact {
    pub cell: CellRef,
    pub value: String,
    pub dict: String,
}

struct ResolvedCondition {
    attr: usize,
    op: MatchOp,
    dict_attr: usize,
}

/// Evaluates every dependency against initial values and collects the
/// suggested values, deduplicated and sorted.
pub fn match_dependencies(
    dataset: &Dataset,
    dicts: &DictRegistry,
    mds: &[MatchingDependency],
    sim_threshold: f64,
) -> Result<Vec<MatchedFact>, DictError> {
    let mut facts = BTreeSet::new();
    for md in mds {
        let dict = dicts
            .get(&md.dict)
            .ok_or_else(|| DictError::UnknownDict(md.dict.clone()))?;
        let conds = md
            .conditions
            .iter()
            .map(|c| {
                Ok(ResolvedCondition {
                    attr: dataset.attribute_index(&c.attr)?,
                    op: c.op,
                    dict_attr: dict.attribute_index(&c.dict_attr)?,
                })
            })
            .collect::<Result<Vec<_>, DictError>>()?;
        let target = dataset.attribute_index(&md.assign.0)?;
        let source = dict.attribute_index(&md.assign.1)?;

        // Rows keyed by the first exact condition, when there is one.
        let key = conds.iter().position(|c| c.op == MatchOp::Exact);
        let mut index: HashMap<&str, Vec<usize>> = HashMap::new();
        if let Some(k) = key {
            for (r, row) in dict.rows.iter().enumerate() {
                if let Some(v) = &row[conds[k].dict_attr] {
                    index.entry(v).or_default().push(r);
                }
            }
        }
        let all_rows: Vec<usize> = (0..dict.rows.len()).collect();

        let found: Vec<MatchedFact> = (0..dataset.num_tuples())
            .into_par_iter()
            .flat_map_iter(|t| {
                let rows: &[usize] = match key {
                    Some(k) => dataset
                        .value(CellRef::new(t, conds[k].attr))
                        .and_then(|v| index.get(v))
                        .map_or(&[], Vec::as_slice),
                    None => &all_rows,
                };
                rows.iter()
                    .filter(|&&r| {
                        conds.iter().all(|c| {
                            let (Some(a), Some(b)) =
                                (dataset.value(CellRef::new(t, c.attr)), dict.rows[r][c.dict_attr].as_deref())
                            else {
                                return false;
                            };
                            match c.op {
                                MatchOp::Exact => a == b,
                                MatchOp::Similar => similarity(a, b) >= sim_threshold,
                            }
                        })
                    })
                    .filter_map(|&r| {
                        dict.rows[r][source].as_ref().map(|v| MatchedFact {
                            cell: CellRef::new(t, target),
                            value: v.clone(),
                            dict: dict.id.clone(),
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        facts.extend(found);
    }
    Ok(facts.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{parse_md, parse_md_file};
    use crate::synthetic::inspection;

    fn setup() -> (Dataset, DictRegistry) {
        let f = inspection();
        let ds = Dataset::from_reader(f.data.as_bytes(), &Default::default()).unwrap();
        let mut reg = DictRegistry::new();
        reg.insert(ExtDict::from_reader("addr", f.dict.as_bytes()).unwrap()).unwrap();
        (ds, reg)
    }

    #[test]
    fn loads_address_listing() {
        let (_, reg) = setup();
        let d = reg.get("addr").unwrap();
        assert_eq!(d.attributes, ["Ext_Address", "Ext_City", "Ext_State", "Ext_Zip"]);
        assert_eq!(d.rows.len(), 4);
        let mut reg = reg;
        let again = ExtDict::from_reader("addr", inspection().dict.as_bytes()).unwrap();
        assert!(matches!(reg.insert(again), Err(DictError::DuplicateId(_))));
        let empty = ExtDict::from_reader("e", "A,B\n".as_bytes()).unwrap();
        assert!(empty.rows.is_empty());
    }

    #[test]
    fn zip_lookup_suggests_city() {
        let (ds, reg) = setup();
        let md = parse_md("dict=addr: Zip=Ext_Zip => City:=Ext_City").unwrap();
        let facts = match_dependencies(&ds, &reg, &[md], 0.8).unwrap();
        let t1_city = ds.cell("1", "City").unwrap();
        assert!(facts.contains(&MatchedFact {
            cell: t1_city,
            value: "Chicago".into(),
            dict: "addr".into()
        }));
        // Only the two tuples with zip 60608 appear in the listing.
        assert_eq!(facts.len(), 2);
    }

    #[test]
    fn similar_city_matches_zip() {
        let (ds, reg) = setup();
        let mds = parse_md_file(inspection().mds).unwrap();
        let facts = match_dependencies(&ds, &reg, &mds, 0.8).unwrap();
        let t4_zip = ds.cell("4", "Zip").unwrap();
        assert!(facts.iter().any(|f| f.cell == t4_zip && f.value == "60608"));
        // Cicago vs Chicago is 6/7 similar, below a 0.9 threshold.
        let strict = match_dependencies(&ds, &reg, &mds, 0.9).unwrap();
        assert!(!strict.iter().any(|f| f.cell == t4_zip));
        assert!(strict.iter().all(|f| facts.contains(f)));
    }

    #[test]
    fn absent_key_and_unknown_dict() {
        let ds = Dataset::from_rows(&["Zip", "City"], &[vec![Some("99999"), Some("X")]]).unwrap();
        let (_, reg) = setup();
        let md = parse_md("dict=addr: Zip=Ext_Zip => City:=Ext_City").unwrap();
        assert!(match_dependencies(&ds, &reg, &[md], 0.8).unwrap().is_empty());
        let md = parse_md("dict=nope: Zip=Ext_Zip => City:=Ext_City").unwrap();
        assert!(matches!(match_dependencies(&ds, &reg, &[md], 0.8), Err(DictError::UnknownDict(_))));
    }
}
