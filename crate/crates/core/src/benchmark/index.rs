use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tags::ChallengeTag;
use crate::error::{Error, Result};

pub const INDEX_HEADER: [&str; 6] = ["id", "rgb", "thermal", "gt", "split", "tags"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("split must be \"train\" or \"test\", found {other:?}")),
        }
    }
}

/// One image pair with its ground truth. Paths are kept as written in the index, relative to
/// the index file's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub rgb: PathBuf,
    pub thermal: PathBuf,
    pub gt: PathBuf,
    pub split: Split,
    pub tags: BTreeSet<ChallengeTag>,
}

impl IndexEntry {
    pub fn has_tag(&self, tag: ChallengeTag) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetIndex {
    /// Directory that entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<IndexEntry>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if let Some(first) = seen.insert(e.id.as_str(), i) {
                return Err(Error::Contract(format!(
                    "duplicate id {:?} at entries {first} and {i}",
                    e.id
                )));
            }
        }
        Ok(DatasetIndex {
            root: root.into(),
            entries,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn parse_err(origin: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        row: line as usize,
        message: message.into(),
    }
}

fn parse_tags(field: &str) -> std::result::Result<BTreeSet<ChallengeTag>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(BTreeSet::new());
    }
    field
        .split(';')
        .map(|code| {
            let code = code.trim();
            if code.is_empty() {
                Err(format!("empty tag in {field:?}"))
            } else {
                code.parse::<ChallengeTag>().map_err(|e| e.to_string())
            }
        })
        .collect()
}

/// Parses index CSV text. `origin` names the source in errors; `root` is the directory entry
/// paths are relative to. Referenced files are not touched.
pub fn parse_index(reader: impl Read, root: &Path, origin: &Path) -> Result<DatasetIndex> {
    Ok(parse_rows(reader, root, origin)?.0)
}

/// The index and the line number of each entry.
fn parse_rows(reader: impl Read, root: &Path, origin: &Path) -> Result<(DatasetIndex, Vec<u64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(parse_err(origin, 1, "missing header")),
        Some(r) => r.map_err(|e| parse_err(origin, 1, e.to_string()))?,
    };
    let header: Vec<&str> = header.iter().map(str::trim).collect();
    if header != INDEX_HEADER {
        return Err(parse_err(
            origin,
            1,
            format!("header must be {:?}, found {header:?}", INDEX_HEADER.join(",")),
        ));
    }

    let mut entries = Vec::new();
    let mut lines = Vec::new();
    let mut first_line: HashMap<String, u64> = HashMap::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(origin, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != INDEX_HEADER.len() {
            return Err(parse_err(
                origin,
                line,
                format!("expected {} fields, found {}", INDEX_HEADER.len(), rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(parse_err(origin, line, "empty id"));
        }
        if let Some(first) = first_line.get(&id) {
            return Err(parse_err(
                origin,
                line,
                format!("duplicate id {id:?} (first used on line {first})"),
            ));
        }
        let path_field = |k: usize| -> Result<PathBuf> {
            let v = rec[k].trim();
            if v.is_empty() {
                return Err(parse_err(origin, line, format!("entry {id:?}: empty {} path", INDEX_HEADER[k])));
            }
            Ok(PathBuf::from(v))
        };
        let (rgb, thermal, gt) = (path_field(1)?, path_field(2)?, path_field(3)?);
        let split = rec[4]
            .trim()
            .parse::<Split>()
            .map_err(|m| parse_err(origin, line, format!("entry {id:?}: {m}")))?;
        let tags = parse_tags(&rec[5]).map_err(|m| parse_err(origin, line, format!("entry {id:?}: {m}")))?;
        first_line.insert(id.clone(), line);
        lines.push(line);
        entries.push(IndexEntry {
            id,
            rgb,
            thermal,
            gt,
            split,
            tags,
        });
    }
    let idx = DatasetIndex {
        root: root.to_path_buf(),
        entries,
    };
    Ok((idx, lines))
}

fn open_index(path: &Path) -> Result<(DatasetIndex, Vec<u64>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_rows(std::io::BufReader::new(file), &root, path)
}

/// Reads an index file and checks that every referenced image exists.
pub fn load_index(path: &Path) -> Result<DatasetIndex> {
    let (idx, lines) = open_index(path)?;
    for (e, line) in idx.entries.iter().zip(lines) {
        for (kind, p) in [("rgb", &e.rgb), ("thermal", &e.thermal), ("gt", &e.gt)] {
            let full = idx.resolve(p);
            if !full.is_file() {
                return Err(parse_err(
                    path,
                    line,
                    format!("entry {:?}: {kind} file {} does not exist", e.id, full.display()),
                ));
            }
        }
    }
    Ok(idx)
}

/// Reads an index file without checking the referenced images, for tag-only analyses.
pub fn load_annotations(path: &Path) -> Result<DatasetIndex> {
    Ok(open_index(path)?.0)
}

fn tags_field(tags: &BTreeSet<ChallengeTag>) -> String {
    tags.iter().map(|t| t.code()).collect::<Vec<_>>().join(";")
}

fn path_str(p: &Path) -> Result<&str> {
    p.to_str()
        .ok_or_else(|| Error::Contract(format!("path {} is not valid UTF-8", p.display())))
}

/// Writes the index as CSV; tags in canonical order.
pub fn emit_index(idx: &DatasetIndex, w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format {
        path: "<index>".into(),
        message: e.to_string(),
    };
    wr.write_record(INDEX_HEADER).map_err(csv_err)?;
    for e in &idx.entries {
        let tags = tags_field(&e.tags);
        wr.write_record([
            e.id.as_str(),
            path_str(&e.rgb)?,
            path_str(&e.thermal)?,
            path_str(&e.gt)?,
            e.split.as_str(),
            tags.as_str(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::io("<index>", e))
}

pub fn save_index(idx: &DatasetIndex, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    emit_index(idx, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetIndex> {
        parse_index(text.as_bytes(), Path::new("root"), Path::new("index.csv"))
    }

    #[test]
    fn empty_data_section() {
        let idx = parse("id,rgb,thermal,gt,split,tags\n").unwrap();
        assert!(idx.is_empty());
    }

    #[test]
    fn tags_split_on_semicolons() {
        let idx = parse("id,rgb,thermal,gt,split,tags\na,a.ppm,a_t.pgm,a_gt.pgm,test,BSO;TC\nb,b.ppm,b_t.pgm,b_gt.pgm,train,\n").unwrap();
        assert_eq!(idx.entries[0].tags, BTreeSet::from([ChallengeTag::Bso, ChallengeTag::Tc]));
        assert!(idx.entries[1].tags.is_empty());
        assert_eq!(idx.entries[1].split, Split::Train);
        assert_eq!(idx.resolve(&idx.entries[0].gt), Path::new("root/a_gt.pgm"));
    }

    #[test]
    fn errors_name_the_row() {
        let bad_tag = parse("id,rgb,thermal,gt,split,tags\na,x,y,z,test,BSO\nb,x,y,z,test,XYZ\n").unwrap_err();
        match bad_tag {
            Error::Parse { row, message, .. } => {
                assert_eq!(row, 3);
                assert!(message.contains("XYZ") && message.contains("\"b\""), "{message}");
            }
            e => panic!("{e}"),
        }
        let dup = parse("id,rgb,thermal,gt,split,tags\na,x,y,z,test,\na,x,y,z,train,\n").unwrap_err();
        assert!(matches!(dup, Error::Parse { row: 3, ref message, .. } if message.contains("\"a\"")));
        let short = parse("id,rgb,thermal,gt,split,tags\na,x,y\n").unwrap_err();
        assert!(matches!(short, Error::Parse { row: 2, .. }));
        let split = parse("id,rgb,thermal,gt,split,tags\na,x,y,z,val,\n").unwrap_err();
        assert!(matches!(split, Error::Parse { row: 2, .. }));
        assert!(matches!(parse("id,rgb,gt\n"), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn emit_round_trips() {
        let text = "id,rgb,thermal,gt,split,tags\nx1,r/x1.ppm,t/x1.pgm,g/x1.pgm,test,TC;BSO;TC\nx2,r/x2.ppm,t/x2.pgm,g/x2.pgm,train,\n";
        let idx = parse(text).unwrap();
        let mut buf = Vec::new();
        emit_index(&idx, &mut buf).unwrap();
        let out = String::from_utf8(buf.clone()).unwrap();
        assert!(out.contains("BSO;TC"));
        assert_eq!(parse(&out).unwrap(), idx);
    }
}
