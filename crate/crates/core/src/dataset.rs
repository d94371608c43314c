//! Immutable in-memory table of tuples and their initial cell values.
//!
//! Every cell is either NULL or a non-empty, whitespace-trimmed token.
//! Comparisons are case-sensitive. A [`Dataset`] is never mutated after
//! loading; repairs produce a fresh table through [`Dataset::with_values`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing header row")]
    MissingHeader,
    #[error("duplicate column {0:?} in header")]
    DuplicateHeader(String),
    #[error("empty column name at header position {0}")]
    EmptyHeader(usize),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate tuple id {tid:?}")]
    DuplicateTid { line: u64, tid: String },
    #[error("line {line}: empty tuple id")]
    EmptyTid { line: u64 },
    #[error("column {0:?} is not in the header")]
    MissingColumn(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("unknown tuple id {0:?}")]
    UnknownTuple(String),
}

/// Trims surrounding whitespace; an empty result is NULL.
pub fn canonicalize(raw: &str) -> Option<String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_string())
    }
}

/// Parses a finite decimal number. Words such as `inf` or `NaN` are rejected
/// so that they keep string semantics.
pub fn parse_decimal(token: &str) -> Option<f64> {
    let bytes = token.as_bytes();
    if !bytes
        .iter()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
    {
        return None;
    }
    if !bytes.iter().any(u8::is_ascii_digit) {
        return None;
    }
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Position of a cell: row index of the tuple and column index of the attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellRef {
    pub tuple: usize,
    pub attr: usize,
}

impl CellRef {
    pub fn new(tuple: usize, attr: usize) -> Self {
        Self { tuple, attr }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}[{}]", self.tuple, self.attr)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Column holding tuple ids. Without it, ids are 1-based row numbers.
    pub tid_column: Option<String>,
    /// Column holding the source of each tuple; removed from the attributes.
    pub provenance_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Column {
    Tid,
    Source,
    Attr(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    header: Vec<String>,
    columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    attributes: Vec<String>,
    attr_index: HashMap<String, usize>,
    tids: Vec<String>,
    tid_index: HashMap<String, usize>,
    cells: Vec<Option<String>>,
    provenance: Option<Vec<Option<String>>>,
    layout: Layout,
}

impl Dataset {
    pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file, options)
    }

    pub fn from_reader<R: Read>(reader: R, options: &LoadOptions) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();
        let header: Vec<String> = match records.next() {
            Some(rec) => rec?.iter().map(|h| h.trim().to_string()).collect(),
            None => return Err(DataError::MissingHeader),
        };
        let mut seen = HashMap::new();
        for (pos, name) in header.iter().enumerate() {
            if name.is_empty() {
                return Err(DataError::EmptyHeader(pos));
            }
            if seen.insert(name.clone(), pos).is_some() {
                return Err(DataError::DuplicateHeader(name.clone()));
            }
        }
        for wanted in [&options.tid_column, &options.provenance_column]
            .into_iter()
            .flatten()
        {
            if !seen.contains_key(wanted) {
                return Err(DataError::MissingColumn(wanted.clone()));
            }
        }

        let mut attributes = Vec::new();
        let columns: Vec<Column> = header
            .iter()
            .map(|name| {
                if options.tid_column.as_deref() == Some(name) {
                    Column::Tid
                } else if options.provenance_column.as_deref() == Some(name) {
                    Column::Source
                } else {
                    attributes.push(name.clone());
                    Column::Attr(attributes.len() - 1)
                }
            })
            .collect();

        let width = attributes.len();
        let mut tids = Vec::new();
        let mut tid_index = HashMap::new();
        let mut cells = Vec::new();
        let mut provenance = options.provenance_column.as_ref().map(|_| Vec::new());

        for rec in records {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != header.len() {
                return Err(DataError::RaggedRow {
                    line,
                    expected: header.len(),
                    found: rec.len(),
                });
            }
            let mut row = vec![None; width];
            let mut tid = None;
            for (field, column) in rec.iter().zip(&columns) {
                match column {
                    Column::Attr(a) => row[*a] = canonicalize(field),
                    Column::Tid => tid = Some(canonicalize(field).ok_or(DataError::EmptyTid { line })?),
                    Column::Source => {
                        if let Some(p) = provenance.as_mut() {
                            p.push(canonicalize(field));
                        }
                    }
                }
            }
            let tid = tid.unwrap_or_else(|| (tids.len() + 1).to_string());
            if tid_index.insert(tid.clone(), tids.len()).is_some() {
                return Err(DataError::DuplicateTid { line, tid });
            }
            tids.push(tid);
            cells.extend(row);
        }

        let attr_index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        Ok(Self {
            attributes,
            attr_index,
            tids,
            tid_index,
            cells,
            provenance,
            layout: Layout { header, columns },
        })
    }

    /// Builds a table directly from rows; tuple ids are 1-based row numbers.
    pub fn from_rows<S: AsRef<str>>(
        attributes: &[S],
        rows: &[Vec<Option<&str>>],
    ) -> Result<Self, DataError> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(attributes.iter().map(|a| a.as_ref()))?;
        for row in rows {
            wtr.write_record(row.iter().map(|v| v.unwrap_or("")))?;
        }
        let bytes = wtr.into_inner().map_err(|e| DataError::Io {
            path: "<memory>".into(),
            source: e.into_error(),
        })?;
        Self::from_reader(bytes.as_slice(), &LoadOptions::default())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.layout.header)?;
        for row in 0..self.num_tuples() {
            let fields = self.layout.columns.iter().map(|c| match c {
                Column::Tid => self.tids[row].as_str(),
                Column::Source => self.provenance(row).unwrap_or(""),
                Column::Attr(a) => self.value(CellRef::new(row, *a)).unwrap_or(""),
            });
            wtr.write_record(fields)?;
        }
        wtr.flush().map_err(|source| DataError::Io {
            path: "<output>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn num_tuples(&self) -> usize {
        self.tids.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn attribute_name(&self, attr: usize) -> &str {
        &self.attributes[attr]
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize, DataError> {
        self.attr_index
            .get(name)
            .copied()
            .ok_or_else(|| DataError::UnknownAttribute(name.to_string()))
    }

    pub fn tuple_id(&self, tuple: usize) -> &str {
        &self.tids[tuple]
    }

    pub fn tuple_index(&self, tid: &str) -> Result<usize, DataError> {
        self.tid_index
            .get(tid)
            .copied()
            .ok_or_else(|| DataError::UnknownTuple(tid.to_string()))
    }

    /// Resolves a `(tuple id, attribute name)` pair to a cell.
    pub fn cell(&self, tid: &str, attribute: &str) -> Result<CellRef, DataError> {
        Ok(CellRef::new(
            self.tuple_index(tid)?,
            self.attribute_index(attribute)?,
        ))
    }

    pub fn value(&self, cell: CellRef) -> Option<&str> {
        self.cells[cell.tuple * self.attributes.len() + cell.attr].as_deref()
    }

    pub fn provenance(&self, tuple: usize) -> Option<&str> {
        self.provenance.as_ref().and_then(|p| p[tuple].as_deref())
    }

    pub fn has_provenance(&self) -> bool {
        self.provenance.is_some()
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellRef> + '_ {
        let width = self.attributes.len();
        (0..self.cells.len()).map(move |i| CellRef::new(i / width, i % width))
    }

    /// Row-major position of a cell, used as its variable id.
    pub fn cell_index(&self, cell: CellRef) -> usize {
        cell.tuple * self.attributes.len() + cell.attr
    }

    pub fn active_domain(&self, attribute: &str) -> Result<BTreeSet<String>, DataError> {
        let attr = self.attribute_index(attribute)?;
        Ok(self
            .column(attr)
            .flatten()
            .map(str::to_string)
            .collect())
    }

    pub fn column(&self, attr: usize) -> impl Iterator<Item = Option<&str>> + '_ {
        (0..self.num_tuples()).map(move |t| self.value(CellRef::new(t, attr)))
    }

    /// Copy of the table with the given cells overwritten.
    pub fn with_values<I>(&self, updates: I) -> Dataset
    where
        I: IntoIterator<Item = (CellRef, Option<String>)>,
    {
        let mut next = self.clone();
        for (cell, value) in updates {
            let idx = self.cell_index(cell);
            next.cells[idx] = value.and_then(|v| canonicalize(&v));
        }
        next
    }
}

/// Reads a `tid,attribute` CSV (with header) into a set of cells.
pub fn load_cell_list(
    path: impl AsRef<Path>,
    dataset: &Dataset,
) -> Result<BTreeSet<CellRef>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_cell_list(file, dataset)
}

pub fn read_cell_list<R: Read>(reader: R, dataset: &Dataset) -> Result<BTreeSet<CellRef>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut cells = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 2 {
            return Err(DataError::RaggedRow {
                line,
                expected: 2,
                found: rec.len(),
            });
        }
        cells.insert(dataset.cell(rec[0].trim(), rec[1].trim())?);
    }
    Ok(cells)
}

/// Reads a `tid,attribute,value` CSV (with header) of true cell values.
pub fn load_groundtruth(
    path: impl AsRef<Path>,
    dataset: &Dataset,
) -> Result<HashMap<CellRef, Option<String>>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_groundtruth(file, dataset)
}

pub fn read_groundtruth<R: Read>(reader: R, dataset: &Dataset) -> Result<HashMap<CellRef, Option<String>>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut truth = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(DataError::RaggedRow {
                line,
                expected: 3,
                found: rec.len(),
            });
        }
        truth.insert(dataset.cell(rec[0].trim(), rec[1].trim())?, canonicalize(&rec[2]));
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INSPECTION: &str = "\
DBAName,AKAName,Address,City,State,Zip
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60608
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60609
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60609
Johnnyo's,Johnnyo's,3465 S Morgan ST,Cicago,IL,60608
";

    fn inspection() -> Dataset {
        Dataset::from_reader(INSPECTION.as_bytes(), &LoadOptions::default()).unwrap()
    }

    #[test]
    fn loads_inspection_snippet() {
        let ds = inspection();
        assert_eq!(ds.num_tuples(), 4);
        assert_eq!(ds.num_attributes(), 6);
        assert_eq!(ds.num_cells(), 24);
        assert_eq!(ds.tuple_id(0), "1");
        assert_eq!(ds.value(ds.cell("4", "City").unwrap()), Some("Cicago"));
    }

    #[test]
    fn active_domains() {
        let ds = inspection();
        let zip: Vec<_> = ds.active_domain("Zip").unwrap().into_iter().collect();
        assert_eq!(zip, ["60608", "60609"]);
        let city: Vec<_> = ds.active_domain("City").unwrap().into_iter().collect();
        assert_eq!(city, ["Chicago", "Cicago"]);
        assert!(matches!(
            ds.active_domain("Nope"),
            Err(DataError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn header_only_is_empty() {
        let ds = Dataset::from_reader("A,B\n".as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.num_tuples(), 0);
        assert!(ds.active_domain("A").unwrap().is_empty());
    }

    #[test]
    fn empty_field_is_null() {
        let ds = Dataset::from_reader("City,Zip\nChicago,  \n".as_bytes(), &LoadOptions::default())
            .unwrap();
        assert_eq!(ds.value(CellRef::new(0, 1)), None);
        assert_eq!(ds.value(CellRef::new(0, 0)), Some("Chicago"));
    }

    #[test]
    fn load_errors() {
        let opts = LoadOptions::default();
        let err = Dataset::from_reader("A,B\n1,2\n3\n".as_bytes(), &opts).unwrap_err();
        assert!(matches!(err, DataError::RaggedRow { line: 3, .. }), "{err}");
        let err = Dataset::from_reader("A,A\n1,2\n".as_bytes(), &opts).unwrap_err();
        assert!(matches!(err, DataError::DuplicateHeader(_)));
        let tid = LoadOptions {
            tid_column: Some("id".into()),
            ..Default::default()
        };
        let err = Dataset::from_reader("id,A\nx,1\nx,2\n".as_bytes(), &tid).unwrap_err();
        assert!(matches!(err, DataError::DuplicateTid { line: 3, .. }));
        assert!(matches!(
            Dataset::from_reader("".as_bytes(), &opts),
            Err(DataError::MissingHeader)
        ));
    }

    #[test]
    fn tid_and_source_columns_are_not_attributes() {
        let opts = LoadOptions {
            tid_column: Some("id".into()),
            provenance_column: Some("src".into()),
        };
        let text = "id,src,A\nr1,web,1\nr2,,2\n";
        let ds = Dataset::from_reader(text.as_bytes(), &opts).unwrap();
        assert_eq!(ds.attributes(), ["A"]);
        assert_eq!(ds.tuple_index("r2").unwrap(), 1);
        assert_eq!(ds.provenance(0), Some("web"));
        assert_eq!(ds.provenance(1), None);
        assert_eq!(ds.to_csv_string(), text);
    }

    #[test]
    fn decimals() {
        assert_eq!(parse_decimal("60608"), Some(60608.0));
        assert_eq!(parse_decimal("-1.5e2"), Some(-150.0));
        assert_eq!(parse_decimal("inf"), None);
        assert_eq!(parse_decimal("12a"), None);
        assert_eq!(parse_decimal("."), None);
    }

    #[test]
    fn with_values_leaves_original_untouched() {
        let ds = inspection();
        let cell = ds.cell("2", "Zip").unwrap();
        let fixed = ds.with_values([(cell, Some("60608".to_string()))]);
        assert_eq!(ds.value(cell), Some("60609"));
        assert_eq!(fixed.value(cell), Some("60608"));
    }

    fn token() -> impl Strategy<Value = Option<String>> {
        prop_oneof![
            1 => Just(None),
            4 => "[A-Za-z0-9][A-Za-z0-9 ,\"']{0,6}[A-Za-z0-9]".prop_map(Some),
        ]
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in prop::collection::vec(prop::collection::vec(token(), 3), 0..8)) {
            let borrowed: Vec<Vec<Option<&str>>> = rows
                .iter()
                .map(|r| r.iter().map(|v| v.as_deref()).collect())
                .collect();
            let ds = Dataset::from_rows(&["A", "B", "C"], &borrowed).unwrap();
            let text = ds.to_csv_string();
            let again = Dataset::from_reader(text.as_bytes(), &LoadOptions::default()).unwrap();
            prop_assert_eq!(&again, &ds);
            prop_assert_eq!(again.to_csv_string(), text);
            for a in ds.attributes() {
                prop_assert!(ds.active_domain(a).unwrap().len() <= ds.num_tuples());
            }
        }
    }
}
