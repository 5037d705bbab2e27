//! Dataset manifests: which image belongs to which class and split.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

/// Class names in label order; the integer label of a class is its index.
pub const CLASS_NAMES: [&str; 3] = ["benign", "malignant", "normal"];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// Directory names of the public dataset distribution, in label order.
pub const DEFAULT_CLASS_DIRS: [&str; 3] = ["Benign cases", "Malignant cases", "Normal cases"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Unsplit,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unsplit => "unsplit",
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

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unsplit" => Ok(Split::Unsplit),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

pub fn label_of(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&c| c == name)
}

/// One image of the dataset. `path` is relative to the dataset root and
/// always uses `/` separators.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub path: String,
    pub label: usize,
    pub split: Split,
}

impl Record {
    pub fn new(path: impl Into<String>, label: usize, split: Split) -> Self {
        Self {
            path: path.into(),
            label,
            split,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    class_names: Vec<String>,
    records: Vec<Record>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            records: Vec::new(),
        }
    }
}

impl DatasetManifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a manifest, rejecting duplicate paths and unknown labels.
    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let mut m = Self::new();
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.label >= m.class_names.len() {
                return Err(Error::argument(format!(
                    "{}: label {} out of range",
                    r.path, r.label
                )));
            }
            if !seen.insert(r.path.as_str()) {
                return Err(Error::argument(format!("duplicate path {}", r.path)));
            }
        }
        m.records = records;
        Ok(m)
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    pub fn with_split(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            class_names: self.class_names.clone(),
            records: self
                .records
                .iter()
                .filter(|r| r.split == split)
                .cloned()
                .collect(),
        }
    }
}

/// Directory name to label mapping used by [`build_manifest`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap(pub Vec<(String, usize)>);

impl Default for ClassMap {
    fn default() -> Self {
        ClassMap(
            DEFAULT_CLASS_DIRS
                .iter()
                .enumerate()
                .map(|(label, dir)| (dir.to_string(), label))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestBuild {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Scans `root/<class dir>/` for PNG and JPEG files.
///
/// A root that contains none of the mapped class directories yields an empty
/// manifest with a warning; a root with only some of them is an error.
pub fn build_manifest(root: impl AsRef<Path>, class_map: &ClassMap) -> Result<ManifestBuild> {
    let root = root.as_ref();
    let meta = std::fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        ));
    }

    let mut warnings = Vec::new();
    let present: Vec<bool> = class_map
        .0
        .iter()
        .map(|(d, _)| root.join(d).is_dir())
        .collect();
    if !present.iter().any(|&p| p) {
        warnings.push(format!(
            "{} contains none of the class directories",
            root.display()
        ));
        return Ok(ManifestBuild {
            manifest: DatasetManifest::new(),
            warnings,
        });
    }

    let mut records = Vec::new();
    for (dir, label) in &class_map.0 {
        let class_dir = root.join(dir);
        let entries = std::fs::read_dir(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&class_dir, e))?;
            let path = entry.path();
            if path.is_file() && is_image_file(&path) {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        if names.is_empty() {
            warnings.push(format!(
                "class directory {} has no images",
                class_dir.display()
            ));
        }
        records.extend(
            names
                .into_iter()
                .map(|n| Record::new(format!("{dir}/{n}"), *label, Split::Unsplit)),
        );
    }
    Ok(ManifestBuild {
        manifest: DatasetManifest::from_records(records)?,
        warnings,
    })
}

const HEADER: [&str; 3] = ["path", "label", "split"];

pub fn write_manifest<W: std::io::Write>(m: &DatasetManifest, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let to_err = |e: csv::Error| Error::Format(format!("manifest csv: {e}"));
    w.write_record(HEADER).map_err(to_err)?;
    for r in &m.records {
        w.write_record([
            r.path.as_str(),
            m.class_names[r.label].as_str(),
            r.split.as_str(),
        ])
        .map_err(to_err)?;
    }
    w.flush()
        .map_err(|e| Error::Format(format!("manifest csv: {e}")))
}

pub fn read_manifest<R: std::io::Read>(input: R) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(input);
    let mut rows = rdr.records();
    let parse_err = |line: u64, message: String| Error::Parse { line, message };

    match rows.next() {
        Some(Ok(header)) if header.iter().eq(HEADER) => {}
        Some(Ok(header)) => {
            return Err(parse_err(
                1,
                format!("expected header path,label,split, got {:?}", header),
            ))
        }
        Some(Err(e)) => return Err(parse_err(1, e.to_string())),
        None => return Err(parse_err(1, "missing header".into())),
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 fields, got {}", row.len()),
            ));
        }
        let path = &row[0];
        if path.is_empty() {
            return Err(parse_err(line, "empty path".into()));
        }
        let label = label_of(&row[1])
            .ok_or_else(|| parse_err(line, format!("unknown label {:?}", &row[1])))?;
        let split = row[2].parse::<Split>().map_err(|e| parse_err(line, e))?;
        if !seen.insert(path.to_string()) {
            return Err(parse_err(line, format!("duplicate path {path}")));
        }
        records.push(Record::new(path, label, split));
    }
    DatasetManifest::from_records(records)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_manifest(m, &mut buf)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(std::io::BufReader::new(file))
}

/// Resolves a manifest path against the dataset root.
pub fn resolve(root: &Path, record: &Record) -> PathBuf {
    root.join(&record.path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn touch(path: &Path) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, b"").unwrap();
    }

    #[test]
    fn scans_class_directories_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        touch(&root.join("Benign cases/b2.png"));
        touch(&root.join("Benign cases/b1.jpg"));
        touch(&root.join("Malignant cases/img.png"));
        touch(&root.join("Malignant cases/notes.txt"));
        touch(&root.join("Normal cases/img.png"));
        let built = build_manifest(root, &ClassMap::default()).unwrap();
        let paths: Vec<_> = built
            .manifest
            .records()
            .iter()
            .map(|r| r.path.as_str())
            .collect();
        assert_eq!(
            paths,
            [
                "Benign cases/b1.jpg",
                "Benign cases/b2.png",
                "Malignant cases/img.png",
                "Normal cases/img.png"
            ]
        );
        assert_eq!(built.manifest.class_counts(), vec![2, 1, 1]);
        assert!(built.warnings.is_empty());
        assert!(built
            .manifest
            .records()
            .iter()
            .all(|r| r.split == Split::Unsplit));
    }

    #[test]
    fn paper_sized_layout() {
        let dir = tempfile::tempdir().unwrap();
        for (d, n) in DEFAULT_CLASS_DIRS.iter().zip([120, 561, 416]) {
            for i in 0..n {
                touch(&dir.path().join(d).join(format!("{d} ({i}).jpg")));
            }
        }
        let built = build_manifest(dir.path(), &ClassMap::default()).unwrap();
        assert_eq!(built.manifest.len(), 1097);
        assert_eq!(built.manifest.class_counts(), vec![120, 561, 416]);
    }

    #[test]
    fn empty_root_warns() {
        let dir = tempfile::tempdir().unwrap();
        let built = build_manifest(dir.path(), &ClassMap::default()).unwrap();
        assert!(built.manifest.is_empty());
        assert_eq!(built.warnings.len(), 1);
    }

    #[test]
    fn empty_class_warns_and_missing_class_errors() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("Benign cases/a.png"));
        std::fs::create_dir(dir.path().join("Malignant cases")).unwrap();
        assert!(matches!(
            build_manifest(dir.path(), &ClassMap::default()),
            Err(Error::Io { .. })
        ));
        std::fs::create_dir(dir.path().join("Normal cases")).unwrap();
        let built = build_manifest(dir.path(), &ClassMap::default()).unwrap();
        assert_eq!(built.warnings.len(), 2);
        assert!(build_manifest(dir.path().join("missing"), &ClassMap::default()).is_err());
    }

    #[test]
    fn duplicate_filenames_across_classes_are_kept() {
        let dir = tempfile::tempdir().unwrap();
        for d in DEFAULT_CLASS_DIRS {
            touch(&dir.path().join(d).join("same.png"));
        }
        let built = build_manifest(dir.path(), &ClassMap::default()).unwrap();
        assert_eq!(built.manifest.len(), 3);
    }

    #[test]
    fn custom_class_map() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("Bengin cases/a.png"));
        touch(&dir.path().join("Malignant/a.png"));
        touch(&dir.path().join("Normal/a.png"));
        let map = ClassMap(vec![
            ("Bengin cases".into(), 0),
            ("Malignant".into(), 1),
            ("Normal".into(), 2),
        ]);
        let built = build_manifest(dir.path(), &map).unwrap();
        assert_eq!(built.manifest.class_counts(), vec![1, 1, 1]);
    }

    #[test]
    fn csv_format_is_exact() {
        let m = DatasetManifest::from_records(vec![
            Record::new("Benign cases/a.png", 0, Split::Train),
            Record::new("Normal cases/b, c.png", 2, Split::Unsplit),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_manifest(&m, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "path,label,split\nBenign cases/a.png,benign,train\n\"Normal cases/b, c.png\",normal,unsplit\n"
        );
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn empty_round_trip() {
        let mut buf = Vec::new();
        write_manifest(&DatasetManifest::new(), &mut buf).unwrap();
        assert!(read_manifest(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn unknown_label_names_line() {
        let csv = "path,label,split\na.png,benign,train\nb.png,squamous,train\n";
        match read_manifest(csv.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("squamous"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(read_manifest("path,label\n".as_bytes()).is_err());
        assert!(read_manifest("path,label,split\na.png,benign\n".as_bytes()).is_err());
        assert!(read_manifest("path,label,split\na.png,benign,holdout\n".as_bytes()).is_err());
        assert!(read_manifest(
            "path,label,split\na.png,benign,train\na.png,normal,val\n".as_bytes()
        )
        .is_err());
        assert!(read_manifest("".as_bytes()).is_err());
    }

    #[test]
    fn large_manifest_round_trip_through_file() {
        let records = (0..1097)
            .map(|i| {
                Record::new(
                    format!("{}/img{i}.png", DEFAULT_CLASS_DIRS[i % 3]),
                    i % 3,
                    [Split::Train, Split::Val, Split::Test, Split::Unsplit][i % 4],
                )
            })
            .collect();
        let m = DatasetManifest::from_records(records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.len(), 1097);
        for (a, b) in loaded.records().iter().zip(m.records()) {
            assert_eq!(a, b);
        }
    }

    fn arb_manifest() -> impl Strategy<Value = DatasetManifest> {
        proptest::collection::btree_map("[a-zA-Z0-9 _,\"./-]{1,24}", (0usize..3, 0usize..4), 0..40)
            .prop_map(|entries| {
                let splits = [Split::Train, Split::Val, Split::Test, Split::Unsplit];
                DatasetManifest::from_records(
                    entries
                        .into_iter()
                        .map(|(p, (l, s))| Record::new(p, l, splits[s]))
                        .collect(),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(m in arb_manifest()) {
            let mut buf = Vec::new();
            write_manifest(&m, &mut buf).unwrap();
            prop_assert_eq!(read_manifest(buf.as_slice()).unwrap(), m);
        }
    }
}
