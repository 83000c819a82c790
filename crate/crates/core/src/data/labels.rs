//! Dataset descriptions and the global label space.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskMode;

/// Describes one dataset on disk. The name is used by data preparation and
/// evaluation bookkeeping only; it never reaches the trainer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub task: TaskMode,
    pub train_path: String,
    pub test_path: String,
    /// Local class names, in file label order (label 1 is `classes[0]`).
    #[serde(default)]
    pub classes: Vec<String>,
    /// Datasets sharing a group share their class indices.
    #[serde(default)]
    pub label_group: Option<String>,
    #[serde(default)]
    pub train_size: Option<usize>,
    #[serde(default)]
    pub test_size: Option<usize>,
}

impl DatasetSpec {
    pub fn new(name: &str, task: TaskMode, classes: &[&str]) -> Self {
        Self {
            name: name.into(),
            task,
            train_path: format!("{name}.train"),
            test_path: format!("{name}.test"),
            classes: classes.iter().map(|c| c.to_string()).collect(),
            label_group: None,
            train_size: None,
            test_size: None,
        }
    }

    pub fn with_group(mut self, group: &str) -> Self {
        self.label_group = Some(group.into());
        self
    }
}

/// Global class indices for every `(dataset, local class)` pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
    map: BTreeMap<String, Vec<usize>>,
}

impl LabelSpace {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn global(&self, dataset: &str, local: usize) -> Result<usize> {
        self.map
            .get(dataset)
            .and_then(|m| m.get(local).copied())
            .ok_or_else(|| Error::Data(format!("dataset {dataset:?} has no class {local}")))
    }

    /// Global indices used by `dataset`, in local order.
    pub fn classes_of(&self, dataset: &str) -> Option<&[usize]> {
        self.map.get(dataset).map(|v| v.as_slice())
    }
}

/// Assigns global indices in spec order. Datasets in the same label group
/// must declare identical class lists and reuse the first one's indices.
pub fn build_label_space(specs: &[DatasetSpec]) -> Result<LabelSpace> {
    if specs.is_empty() {
        return Err(Error::Config("no datasets given".into()));
    }
    let mut names: Vec<String> = Vec::new();
    let mut map = BTreeMap::new();
    let mut groups: BTreeMap<String, (Vec<String>, Vec<usize>)> = BTreeMap::new();
    for spec in specs {
        if map.contains_key(&spec.name) {
            return Err(Error::Config(format!("dataset {:?} registered twice", spec.name)));
        }
        let mut seen = HashSet::new();
        for c in &spec.classes {
            if !seen.insert(c) {
                return Err(Error::Config(format!("class {c:?} registered twice in {:?}", spec.name)));
            }
        }
        let indices = match &spec.label_group {
            Some(g) => match groups.get(g) {
                Some((classes, idx)) => {
                    if classes != &spec.classes {
                        return Err(Error::Config(format!(
                            "dataset {:?} disagrees with label group {g:?}",
                            spec.name
                        )));
                    }
                    idx.clone()
                }
                None => {
                    let idx = allocate(&mut names, &spec.classes, Some(g));
                    groups.insert(g.clone(), (spec.classes.clone(), idx.clone()));
                    idx
                }
            },
            None => allocate(&mut names, &spec.classes, Some(&spec.name)),
        };
        map.insert(spec.name.clone(), indices);
    }
    Ok(LabelSpace { names, map })
}

fn allocate(names: &mut Vec<String>, classes: &[String], prefix: Option<&String>) -> Vec<usize> {
    classes
        .iter()
        .map(|c| {
            names.push(match prefix {
                Some(p) => format!("{p}/{c}"),
                None => c.clone(),
            });
            names.len() - 1
        })
        .collect()
}

pub const BALANCED_TRAIN_SIZE: usize = 115_000;
pub const BALANCED_TEST_SIZE: usize = 7_600;

/// The five text classification datasets, with the two rating datasets
/// sharing one label group.
pub fn classification_specs() -> Vec<DatasetSpec> {
    let stars = ["1", "2", "3", "4", "5"];
    let sized = |s: DatasetSpec| DatasetSpec {
        train_size: Some(BALANCED_TRAIN_SIZE),
        test_size: Some(BALANCED_TEST_SIZE),
        ..s
    };
    vec![
        sized(DatasetSpec::new("agnews", TaskMode::Classification, &["world", "sports", "business", "sci/tech"])),
        sized(DatasetSpec::new("yelp", TaskMode::Classification, &stars).with_group("rating")),
        sized(DatasetSpec::new(
            "dbpedia",
            TaskMode::Classification,
            &[
                "company",
                "educational institution",
                "artist",
                "athlete",
                "office holder",
                "mean of transportation",
                "building",
                "natural place",
                "village",
                "animal",
                "plant",
                "album",
                "film",
                "written work",
            ],
        )),
        sized(DatasetSpec::new("amazon", TaskMode::Classification, &stars).with_group("rating")),
        sized(DatasetSpec::new(
            "yahoo",
            TaskMode::Classification,
            &[
                "society & culture",
                "science & mathematics",
                "health",
                "education & reference",
                "computers & internet",
                "sports",
                "business & finance",
                "entertainment & music",
                "family & relationships",
                "politics & government",
            ],
        )),
    ]
}

/// The four QA datasets; the two TriviaQA sections are separate datasets.
pub fn qa_specs() -> Vec<DatasetSpec> {
    ["quac", "trweb", "trwik", "squad"].iter().map(|n| DatasetSpec::new(n, TaskMode::Span, &[])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_classification_datasets_give_33_classes() {
        let space = build_label_space(&classification_specs()).unwrap();
        assert_eq!(space.len(), 33);
        assert_eq!(space.classes_of("yelp"), space.classes_of("amazon"));
        assert_ne!(space.classes_of("yelp"), space.classes_of("agnews"));
    }

    #[test]
    fn agnews_alone_has_four() {
        let specs: Vec<_> = classification_specs().into_iter().filter(|s| s.name == "agnews").collect();
        assert_eq!(build_label_space(&specs).unwrap().len(), 4);
    }

    #[test]
    fn disjoint_synthetic_sets_union() {
        let a = DatasetSpec::new("a", TaskMode::Classification, &["x", "y", "z"]);
        let b = DatasetSpec::new("b", TaskMode::Classification, &["x", "y", "z"]);
        let space = build_label_space(&[a, b]).unwrap();
        assert_eq!(space.len(), 6);
        assert_eq!(space.global("b", 0).unwrap(), 3);
        assert!(space.global("b", 3).is_err());
    }

    #[test]
    fn duplicate_registration_is_a_config_error() {
        let a = DatasetSpec::new("a", TaskMode::Classification, &["x", "x"]);
        assert!(matches!(build_label_space(&[a]), Err(Error::Config(_))));
        let b = DatasetSpec::new("b", TaskMode::Classification, &["x"]);
        assert!(matches!(build_label_space(&[b.clone(), b]), Err(Error::Config(_))));
        assert!(matches!(build_label_space(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn balanced_sizes() {
        assert_eq!(BALANCED_TRAIN_SIZE, 115_000);
        assert_eq!(BALANCED_TEST_SIZE, 7_600);
        assert_eq!(classification_specs()[0].train_size, Some(115_000));
    }
}
