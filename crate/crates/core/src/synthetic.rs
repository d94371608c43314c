//! Test workloads: the four-tuple food-inspection snippet and a seeded
//! generator for zip/city/state tables with injected typos.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Input files for the food-inspection snippet, as file contents.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub data: &'static str,
    pub dcs: &'static str,
    pub dict: &'static str,
    pub mds: &'static str,
    pub noisy_cells: &'static str,
    pub groundtruth: String,
    pub corrected: &'static str,
}

const INSPECTION_DATA: &str = "\
DBAName,AKAName,Address,City,State,Zip
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60608
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60609
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60609
Johnnyo's,Johnnyo's,3465 S Morgan ST,Cicago,IL,60608
";

const INSPECTION_CORRECTED: &str = "\
DBAName,AKAName,Address,City,State,Zip
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60608
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60608
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60608
John Veliotis Sr.,Johnnyo's,3465 S Morgan ST,Chicago,IL,60608
";

const INSPECTION_DCS: &str = "\
# DBAName -> Zip
t1&t2&EQ(t1.DBAName,t2.DBAName)&IQ(t1.Zip,t2.Zip)
# Zip -> City, State
t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.City,t2.City)
t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.State,t2.State)
# City, State, Address -> Zip
t1&t2&EQ(t1.City,t2.City)&EQ(t1.State,t2.State)&EQ(t1.Address,t2.Address)&IQ(t1.Zip,t2.Zip)
";

const INSPECTION_DICT: &str = "\
Ext_Address,Ext_City,Ext_State,Ext_Zip
3465 S Morgan ST,Chicago,IL,60608
1208 N Wells ST,Chicago,IL,60610
259 E Erie ST,Chicago,IL,60611
2806 W Cermak Rd,Chicago,IL,60623
";

const INSPECTION_MDS: &str = "\
dict=addr: Zip=Ext_Zip => City:=Ext_City
dict=addr: Zip=Ext_Zip => State:=Ext_State
dict=addr: City~Ext_City & State=Ext_State & Address=Ext_Address => Zip:=Ext_Zip
";

// No constraint covers the t4 DBAName abbreviation, so it is flagged
// explicitly.
const INSPECTION_NOISY: &str = "tid,attribute\n4,DBAName\n";

pub fn inspection() -> Fixture {
    let mut groundtruth = String::from("tid,attribute,value\n");
    let mut rows = csv::Reader::from_reader(INSPECTION_CORRECTED.as_bytes());
    let header = rows.headers().expect("static header").clone();
    for (i, rec) in rows.records().enumerate() {
        let rec = rec.expect("static rows");
        for (attr, value) in header.iter().zip(rec.iter()) {
            let _ = writeln!(groundtruth, "{},{},{}", i + 1, attr, csv_field(value));
        }
    }
    Fixture {
        data: INSPECTION_DATA,
        dcs: INSPECTION_DCS,
        dict: INSPECTION_DICT,
        mds: INSPECTION_MDS,
        noisy_cells: INSPECTION_NOISY,
        groundtruth,
        corrected: INSPECTION_CORRECTED,
    }
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

const CITIES: [&str; 30] = [
    "Aurora", "Belvidere", "Carbondale", "Danville", "Elgin", "Freeport", "Galesburg",
    "Hinsdale", "Joliet", "Kankakee", "Lombard", "Macomb", "Naperville", "Oakbrook",
    "Peoria", "Quincy", "Rockford", "Skokie", "Tinley", "Urbana", "Vernon", "Waukegan",
    "Wheaton", "Yorkville", "Zion", "Alton", "Batavia", "Cicero", "Dekalb", "Evanston",
];

const STATES: [&str; 6] = ["IL", "WI", "IN", "MI", "OH", "IA"];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub tuples: usize,
    pub zips: usize,
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            tuples: 1000,
            zips: 30,
            error_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    /// CSV with columns `tid,Zip,City,State`.
    pub data: String,
    /// CSV `tid,attribute,value` covering every cell.
    pub groundtruth: String,
    pub dcs: String,
    /// `(tid, attribute)` of every corrupted cell.
    pub corrupted: BTreeSet<(usize, &'static str)>,
}

pub const SYNTHETIC_ATTRS: [&str; 3] = ["Zip", "City", "State"];

pub const SYNTHETIC_DCS: &str = "\
t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.City,t2.City)
t1&t2&EQ(t1.Zip,t2.Zip)&IQ(t1.State,t2.State)
t1&t2&EQ(t1.City,t2.City)&EQ(t1.State,t2.State)&IQ(t1.Zip,t2.Zip)
";

/// Builds a table from a clean zip -> (city, state) mapping and replaces a
/// uniformly chosen `error_rate` share of cells with typos that fall outside
/// the clean values of their attribute.
pub fn generate(config: &SyntheticConfig) -> Synthetic {
    assert!(config.zips <= CITIES.len(), "at most {} zips", CITIES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let per_state = config.zips.div_ceil(STATES.len());
    let mapping: Vec<[String; 3]> = (0..config.zips)
        .map(|z| {
            [
                format!("{}", 60601 + z),
                CITIES[z].to_string(),
                STATES[z / per_state].to_string(),
            ]
        })
        .collect();

    let mut assignment: Vec<usize> = (0..config.tuples).map(|i| i % config.zips).collect();
    assignment.shuffle(&mut rng);
    let clean: Vec<[String; 3]> = assignment.iter().map(|&z| mapping[z].clone()).collect();
    let clean_values: Vec<BTreeSet<&str>> = (0..3)
        .map(|a| mapping.iter().map(|m| m[a].as_str()).collect())
        .collect();

    let n_cells = config.tuples * 3;
    let n_errors = ((n_cells as f64) * config.error_rate).round() as usize;
    let mut positions: Vec<usize> = (0..n_cells).collect();
    positions.shuffle(&mut rng);
    let mut dirty = clean.clone();
    let mut corrupted = BTreeSet::new();
    for &p in positions.iter().take(n_errors) {
        let (t, a) = (p / 3, p % 3);
        dirty[t][a] = loop {
            let candidate = typo(&clean[t][a], &mut rng);
            if !clean_values[a].contains(candidate.as_str()) {
                break candidate;
            }
        };
        corrupted.insert((t + 1, SYNTHETIC_ATTRS[a]));
    }

    let mut data = String::from("tid,Zip,City,State\n");
    let mut groundtruth = String::from("tid,attribute,value\n");
    for (t, (row, truth)) in dirty.iter().zip(&clean).enumerate() {
        let _ = writeln!(data, "{},{},{},{}", t + 1, row[0], row[1], row[2]);
        for (a, name) in SYNTHETIC_ATTRS.iter().enumerate() {
            let _ = writeln!(groundtruth, "{},{},{}", t + 1, name, truth[a]);
        }
    }
    Synthetic {
        data,
        groundtruth,
        dcs: SYNTHETIC_DCS.to_string(),
        corrupted,
    }
}

/// One random substitution, deletion, insertion or adjacent swap.
fn typo(value: &str, rng: &mut impl Rng) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let mut chars: Vec<char> = value.chars().collect();
    let random_char = |rng: &mut dyn rand::RngCore| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char;
    match rng.gen_range(0..4) {
        0 if !chars.is_empty() => {
            let i = rng.gen_range(0..chars.len());
            chars[i] = random_char(rng);
        }
        1 if chars.len() > 1 => {
            chars.remove(rng.gen_range(0..chars.len()));
        }
        3 if chars.len() > 1 => {
            let i = rng.gen_range(0..chars.len() - 1);
            chars.swap(i, i + 1);
        }
        _ => {
            let i = rng.gen_range(0..=chars.len());
            chars.insert(i, random_char(rng));
        }
    }
    chars.into_iter().collect()
}
