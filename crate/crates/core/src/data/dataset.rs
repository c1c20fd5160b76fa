use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::sequence::{frame_files, load_sequence_sized, Role, SequenceKey, SilhouetteSequence};
use crate::error::{GaitError, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Sequences ordered by key; indices are stable for a given content.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    sequences: Vec<SilhouetteSequence>,
    index: BTreeMap<SequenceKey, usize>,
}

impl Dataset {
    pub fn from_sequences(mut sequences: Vec<SilhouetteSequence>) -> Result<Self> {
        sequences.sort_by(|a, b| a.key.cmp(&b.key));
        let mut index = BTreeMap::new();
        for (i, s) in sequences.iter().enumerate() {
            if index.insert(s.key.clone(), i).is_some() {
                return Err(GaitError::data(format!("duplicate sequence {}", s.key)));
            }
        }
        Ok(Dataset { sequences, index })
    }

    /// Loads `root/<subject>/<probe|gallery>/<view>/*.png`, normalizing every
    /// frame to `size x size`. A `manifest.csv` at the root, when present,
    /// must agree with what is on disk.
    pub fn load(root: &Path, size: usize) -> Result<Self> {
        let dirs = sequence_dirs(root)?;
        if dirs.is_empty() {
            return Err(GaitError::data(format!("{}: no sequences found", root.display())));
        }
        let sequences = dirs
            .par_iter()
            .map(|(key, dir)| {
                load_sequence_sized(dir, size).map(|mut s| {
                    s.key = key.clone();
                    s
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dataset = Dataset::from_sequences(sequences)?;
        let manifest = root.join(MANIFEST_FILE);
        if manifest.is_file() {
            dataset.check_manifest(&manifest)?;
        }
        Ok(dataset)
    }

    fn check_manifest(&self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| GaitError::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = lines.next().map(|(_, l)| l.trim()).unwrap_or_default();
        if header != "subject_id,role,view,path,frame_count" {
            return Err(GaitError::data(format!("{}: unexpected header '{header}'", path.display())));
        }
        let mut listed = BTreeSet::new();
        for (n, line) in lines {
            let bad = |why: String| GaitError::data(format!("{}:{}: {why}", path.display(), n + 1));
            let cols: Vec<&str> = line.trim().split(',').collect();
            let [subject, role, view, _, count] = cols[..] else {
                return Err(bad(format!("expected 5 columns, got {}", cols.len())));
            };
            let key = SequenceKey::new(subject, role.parse()?, view.parse().map_err(|_| bad(format!("bad view '{view}'")))?)?;
            let count: usize = count.parse().map_err(|_| bad(format!("bad frame_count '{count}'")))?;
            let seq = self.get(&key).ok_or_else(|| bad(format!("{key} listed but not on disk")))?;
            if seq.frames.len() != count {
                return Err(bad(format!("{key} has {} frames, manifest says {count}", seq.frames.len())));
            }
            listed.insert(key);
        }
        if let Some(missing) = self.index.keys().find(|k| !listed.contains(*k)) {
            return Err(GaitError::data(format!("{}: {missing} is on disk but not listed", path.display())));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[SilhouetteSequence] {
        &self.sequences
    }

    pub fn sequence(&self, idx: usize) -> &SilhouetteSequence {
        &self.sequences[idx]
    }

    pub fn get(&self, key: &SequenceKey) -> Option<&SilhouetteSequence> {
        self.index_of(key).map(|i| &self.sequences[i])
    }

    pub fn index_of(&self, key: &SequenceKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.index.keys().map(|k| k.subject_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Sorted distinct views of `role`.
    pub fn views(&self, role: Role) -> Vec<u32> {
        let set: BTreeSet<u32> = self.index.keys().filter(|k| k.role == role).map(|k| k.view).collect();
        set.into_iter().collect()
    }

    /// Indices of `role` sequences, in key order.
    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.sequences[i].key.role == role).collect()
    }

    /// Indices of `role` sequences at `view`, in subject order.
    pub fn indices_at(&self, role: Role, view: u32) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| {
                let k = &self.sequences[i].key;
                k.role == role && k.view == view
            })
            .collect()
    }

    pub fn subset(&self, subjects: &[String]) -> Result<Dataset> {
        let wanted: BTreeSet<&str> = subjects.iter().map(String::as_str).collect();
        let picked: Vec<_> = self
            .sequences
            .iter()
            .filter(|s| wanted.contains(s.key.subject_id.as_str()))
            .cloned()
            .collect();
        let found: BTreeSet<&str> = picked.iter().map(|s| s.key.subject_id.as_str()).collect();
        if let Some(missing) = wanted.iter().find(|s| !found.contains(*s)) {
            return Err(GaitError::data(format!("subject '{missing}' not in dataset")));
        }
        Dataset::from_sequences(picked)
    }

    pub fn resized(&self, size: usize) -> Dataset {
        Dataset {
            sequences: self.sequences.par_iter().map(|s| s.resized(size)).collect(),
            index: self.index.clone(),
        }
    }

    /// Frame side length shared by every sequence, if uniform.
    pub fn frame_size(&self) -> Option<usize> {
        let (h, w) = self.sequences.first()?.frame_size();
        (h == w && self.sequences.iter().all(|s| s.frame_size() == (h, w))).then_some(h)
    }
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, std::path::PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| GaitError::io(dir, e))? {
        let path = entry.map_err(|e| GaitError::io(dir, e))?.path();
        if path.is_dir() {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

fn sequence_dirs(root: &Path) -> Result<Vec<(SequenceKey, std::path::PathBuf)>> {
    if !root.is_dir() {
        return Err(GaitError::data(format!("{}: dataset root is not a directory", root.display())));
    }
    let mut out = Vec::new();
    for (subject, sdir) in sorted_subdirs(root)? {
        for (role, rdir) in sorted_subdirs(&sdir)? {
            let role: Role = role
                .parse()
                .map_err(|_| GaitError::data(format!("{}: expected probe or gallery", rdir.display())))?;
            for (view, vdir) in sorted_subdirs(&rdir)? {
                let view: u32 = view
                    .parse()
                    .map_err(|_| GaitError::data(format!("{}: view directory must be an integer", vdir.display())))?;
                if frame_files(&vdir)?.is_empty() {
                    continue;
                }
                out.push((SequenceKey::new(subject.clone(), role, view)?, vdir));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn seq(subject: &str, role: Role, view: u32) -> SilhouetteSequence {
        let frames = vec![Tensor::zeros(&[4, 4]), Tensor::filled(&[4, 4], 1.0)];
        SilhouetteSequence::new(SequenceKey::new(subject, role, view).unwrap(), frames).unwrap()
    }

    #[test]
    fn ordering_and_lookup() {
        let ds = Dataset::from_sequences(vec![
            seq("b", Role::Probe, 65),
            seq("a", Role::Gallery, 55),
            seq("a", Role::Probe, 55),
        ])
        .unwrap();
        assert_eq!(ds.subjects(), ["a", "b"]);
        assert_eq!(ds.sequence(0).key.to_string(), "a/probe/55");
        assert_eq!(ds.views(Role::Probe), [55, 65]);
        assert_eq!(ds.indices_at(Role::Gallery, 55), [1]);
        assert!(Dataset::from_sequences(vec![seq("a", Role::Probe, 55), seq("a", Role::Probe, 55)]).is_err());
        assert_eq!(ds.subset(&["b".into()]).unwrap().len(), 1);
        assert!(ds.subset(&["zz".into()]).is_err());
    }
}
