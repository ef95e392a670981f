//! Vertical-category grouping: clusters whose labels name entities of the
//! same knowledge-base class are presented as one aggregate aspect.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::candidates::canonicalize;
use crate::candidates::ENTITY_PLACEHOLDER;
use crate::dedup::AspectCluster;
use crate::kb::KnowledgeBase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectGroup {
    pub display_label: String,
    pub members: Vec<AspectCluster>,
    pub group_score: f64,
    pub is_vertical: bool,
    /// Shared class of a vertical group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    /// Redirect-resolved lookup term of each member label, when it has a class.
    pub resolved: Vec<Option<String>>,
}

impl AspectGroup {
    fn singleton(cluster: AspectCluster, resolved: Option<String>) -> Self {
        AspectGroup {
            display_label: cluster.label.clone(),
            group_score: cluster.label_score,
            members: vec![cluster],
            is_vertical: false,
            class: None,
            resolved: vec![resolved],
        }
    }

    /// Label of the highest-scoring member cluster; the group is retrieved
    /// and compared through it.
    pub fn representative(&self) -> &str {
        &self.members[0].label
    }

    /// All underlying aspect surfaces.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.members.iter().flat_map(|c| c.members.iter().map(String::as_str))
    }
}

/// Term looked up for an aspect label: the label with the query entity
/// removed, or the label itself when it does not contain the entity.
pub fn lookup_term(label: &str, entity: &str) -> String {
    let canonical = canonicalize(label, entity);
    if canonical == label {
        return label.to_string();
    }
    let rest: Vec<&str> = canonical
        .split_whitespace()
        .filter(|t| *t != ENTITY_PLACEHOLDER)
        .collect();
    if rest.is_empty() {
        label.to_string()
    } else {
        rest.join(" ")
    }
}

fn by_score(a: &AspectCluster, b: &AspectCluster) -> std::cmp::Ordering {
    b.label_score
        .total_cmp(&a.label_score)
        .then_with(|| a.label.cmp(&b.label))
}

/// Merge clusters whose labels resolve to a shared class (at least two of
/// them) into a vertical group named after the class. Ambiguous terms never
/// resolve, so they always stay singletons.
pub fn group_by_class(clusters: &[AspectCluster], kb: &KnowledgeBase, entity: &str) -> Vec<AspectGroup> {
    let mut by_class: BTreeMap<String, Vec<(AspectCluster, String, String)>> = BTreeMap::new();
    let mut groups: Vec<AspectGroup> = Vec::new();
    for cluster in clusters {
        let term = lookup_term(&cluster.label, entity);
        match kb.lookup_class(&term) {
            Some(class) => by_class.entry(class.to_lowercase()).or_default().push((
                cluster.clone(),
                class.to_string(),
                kb.resolve(&term).to_string(),
            )),
            None => groups.push(AspectGroup::singleton(cluster.clone(), None)),
        }
    }
    for (_, mut members) in by_class {
        if members.len() < 2 {
            for (cluster, _, resolved) in members {
                groups.push(AspectGroup::singleton(cluster, Some(resolved)));
            }
            continue;
        }
        members.sort_by(|a, b| by_score(&a.0, &b.0));
        let class = members[0].1.clone();
        groups.push(AspectGroup {
            display_label: class.clone(),
            group_score: members[0].0.label_score,
            is_vertical: true,
            class: Some(class),
            resolved: members.iter().map(|m| Some(m.2.clone())).collect(),
            members: members.into_iter().map(|m| m.0).collect(),
        });
    }
    groups.sort_by(|a, b| {
        b.group_score
            .total_cmp(&a.group_score)
            .then_with(|| a.display_label.cmp(&b.display_label))
            .then_with(|| a.representative().cmp(b.representative()))
    });
    groups
}

/// Each cluster as its own group.
pub fn ungrouped(clusters: &[AspectCluster]) -> Vec<AspectGroup> {
    clusters
        .iter()
        .cloned()
        .map(|c| AspectGroup::singleton(c, None))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(label: &str, score: f64) -> AspectCluster {
        AspectCluster {
            label: label.into(),
            members: vec![label.into()],
            label_score: score,
        }
    }

    fn kb() -> KnowledgeBase {
        KnowledgeBase::from_rows(
            [
                ("harvard university", "University"),
                ("oxford university", "University"),
                ("new york university", "University"),
                ("yale university", "University"),
                ("history", "Album"),
                ("food", "Album"),
                ("hanoi", "City"),
                ("da nang", "City"),
            ],
            [("nyu", "new york university")],
            ["history", "food"],
        )
        .unwrap()
    }

    #[test]
    fn universities_group_through_redirect() {
        let clusters = vec![
            cluster("yale university ranking", 0.4),
            cluster("harvard university", 0.3),
            cluster("nyu", 0.2),
            cluster("oxford university", 0.1),
        ];
        let groups = group_by_class(&clusters, &kb(), "yale university");
        assert_eq!(groups.len(), 2);
        let vertical = groups.iter().find(|g| g.is_vertical).unwrap();
        assert_eq!(vertical.display_label, "University");
        assert_eq!(vertical.members.len(), 3);
        assert_eq!(vertical.group_score, 0.3);
        assert!(vertical.resolved.contains(&Some("new york university".into())));
    }

    #[test]
    fn ambiguous_terms_stay_apart() {
        let clusters = vec![cluster("vietnam history", 0.3), cluster("food", 0.2)];
        let groups = group_by_class(&clusters, &kb(), "vietnam");
        assert_eq!(groups.len(), 2);
        assert!(groups.iter().all(|g| !g.is_vertical));
    }

    #[test]
    fn entity_is_stripped_before_lookup() {
        assert_eq!(lookup_term("vietnam hanoi", "vietnam"), "hanoi");
        assert_eq!(lookup_term("hanoi", "vietnam"), "hanoi");
        assert_eq!(lookup_term("vietnam", "vietnam"), "vietnam");
        let groups = group_by_class(
            &[cluster("vietnam hanoi", 0.5), cluster("da nang", 0.1)],
            &kb(),
            "vietnam",
        );
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].display_label, "City");
    }

    #[test]
    fn no_shared_class_is_identity() {
        let clusters = vec![cluster("b", 0.5), cluster("a", 0.5), cluster("hanoi", 0.2)];
        let groups = group_by_class(&clusters, &kb(), "vietnam");
        let labels: Vec<&str> = groups.iter().map(|g| g.display_label.as_str()).collect();
        assert_eq!(labels, ["a", "b", "hanoi"]);
        assert_eq!(groups.iter().map(|g| g.members.len()).sum::<usize>(), 3);
    }

    #[test]
    fn grouping_is_order_independent() {
        let mut clusters = vec![
            cluster("harvard university", 0.3),
            cluster("nyu", 0.2),
            cluster("history", 0.25),
            cluster("oxford university", 0.1),
        ];
        let a = group_by_class(&clusters, &kb(), "yale university");
        clusters.reverse();
        let b = group_by_class(&clusters, &kb(), "yale university");
        assert_eq!(a, b);
        let surfaces: usize = a.iter().map(|g| g.surfaces().count()).sum();
        assert_eq!(surfaces, 4);
    }
}
