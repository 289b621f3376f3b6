use std::collections::BTreeSet;

use rusqlite::Row;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use super::access::{AccessPolicy, Visibility};
use crate::db::from_json;
use crate::ids::{AnalyticId, DatasetId, FacilityId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Dataset,
    Analytic,
    Facility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Upload,
    Extracted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: DatasetId,
    pub name: String,
    pub description: String,
    pub tags: BTreeSet<String>,
    pub format_hint: String,
    pub content_ref: String,
    pub size_bytes: u64,
    pub checksum: String,
    pub collected_at: Option<i64>,
    pub collection_method: String,
    pub expires_at: Option<i64>,
    pub expired_flag: bool,
    pub origin: Origin,
    pub policy: AccessPolicy,
    pub version: u64,
    pub created_at: i64,
    pub updated_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analytic {
    pub id: AnalyticId,
    pub name: String,
    pub description: String,
    pub tags: BTreeSet<String>,
    pub runtime_id: String,
    pub artifact_ref: String,
    pub checksum: String,
    pub default_params: Value,
    pub policy: AccessPolicy,
    pub version: u64,
    pub created_at: i64,
    pub updated_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facility {
    pub id: FacilityId,
    pub name: String,
    pub location_label: String,
    pub description: String,
    pub image_ref: Option<String>,
    pub policy: AccessPolicy,
    pub created_at: i64,
}

/// A search hit of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resource {
    Dataset(Dataset),
    Analytic(Analytic),
    Facility(Facility),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default, alias = "format")]
    pub format_hint: String,
    #[serde(default)]
    pub collected_at: Option<i64>,
    #[serde(default)]
    pub collection_method: String,
    #[serde(default)]
    pub expires_at: Option<i64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalyticMeta {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(alias = "runtime")]
    pub runtime_id: String,
    #[serde(default = "empty_object")]
    pub default_params: Value,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FacilityMeta {
    pub name: String,
    #[serde(default)]
    pub location_label: String,
    #[serde(default)]
    pub description: String,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

/// Distinguishes an absent field from an explicit `null`.
fn nullable<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<i64>>, D::Error> {
    Option::<i64>::deserialize(d).map(Some)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub tags: Option<BTreeSet<String>>,
    #[serde(default, alias = "format")]
    pub format_hint: Option<String>,
    #[serde(default, deserialize_with = "nullable", skip_serializing_if = "Option::is_none")]
    pub collected_at: Option<Option<i64>>,
    #[serde(default)]
    pub collection_method: Option<String>,
    #[serde(default, deserialize_with = "nullable", skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<Option<i64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalyticPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub tags: Option<BTreeSet<String>>,
    #[serde(default, alias = "runtime")]
    pub runtime_id: Option<String>,
    #[serde(default)]
    pub default_params: Option<Value>,
}

fn policy_from_row(r: &Row<'_>) -> rusqlite::Result<AccessPolicy> {
    let visibility: String = r.get("visibility")?;
    let shared: String = r.get("shared_with")?;
    Ok(AccessPolicy {
        owner: r.get::<_, UserId>("owner")?,
        visibility: Visibility::parse(&visibility),
        shared_with: from_json(&shared)?,
    })
}

impl Dataset {
    pub(crate) fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        let tags: String = r.get("tags")?;
        let origin: String = r.get("origin")?;
        Ok(Dataset {
            id: r.get("id")?,
            name: r.get("name")?,
            description: r.get("description")?,
            tags: from_json(&tags)?,
            format_hint: r.get("format_hint")?,
            content_ref: r.get("content_ref")?,
            size_bytes: r.get::<_, i64>("size_bytes")? as u64,
            checksum: r.get("checksum")?,
            collected_at: r.get("collected_at")?,
            collection_method: r.get("collection_method")?,
            expires_at: r.get("expires_at")?,
            expired_flag: r.get("expired_flag")?,
            origin: if origin == "extracted" { Origin::Extracted } else { Origin::Upload },
            policy: policy_from_row(r)?,
            version: r.get::<_, i64>("version")? as u64,
            created_at: r.get("created_at")?,
            updated_at: r.get("updated_at")?,
        })
    }
}

impl Analytic {
    pub(crate) fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        let tags: String = r.get("tags")?;
        let params: String = r.get("default_params")?;
        Ok(Analytic {
            id: r.get("id")?,
            name: r.get("name")?,
            description: r.get("description")?,
            tags: from_json(&tags)?,
            runtime_id: r.get("runtime_id")?,
            artifact_ref: r.get("artifact_ref")?,
            checksum: r.get("checksum")?,
            default_params: from_json(&params)?,
            policy: policy_from_row(r)?,
            version: r.get::<_, i64>("version")? as u64,
            created_at: r.get("created_at")?,
            updated_at: r.get("updated_at")?,
        })
    }
}

impl Facility {
    pub(crate) fn from_row(r: &Row<'_>) -> rusqlite::Result<Self> {
        Ok(Facility {
            id: r.get("id")?,
            name: r.get("name")?,
            location_label: r.get("location_label")?,
            description: r.get("description")?,
            image_ref: r.get("image_ref")?,
            policy: policy_from_row(r)?,
            created_at: r.get("created_at")?,
        })
    }
}

/// Case-insensitive substring match over name, description and tags.
pub(crate) fn matches_query(query_lower: &str, name: &str, description: &str, tags: &BTreeSet<String>) -> bool {
    query_lower.is_empty()
        || name.to_lowercase().contains(query_lower)
        || description.to_lowercase().contains(query_lower)
        || tags.iter().any(|t| t.to_lowercase().contains(query_lower))
}

impl Resource {
    pub fn policy(&self) -> &AccessPolicy {
        match self {
            Resource::Dataset(d) => &d.policy,
            Resource::Analytic(a) => &a.policy,
            Resource::Facility(f) => &f.policy,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Resource::Dataset(d) => &d.name,
            Resource::Analytic(a) => &a.name,
            Resource::Facility(f) => &f.name,
        }
    }

    pub fn id(&self) -> i64 {
        match self {
            Resource::Dataset(d) => d.id.0,
            Resource::Analytic(a) => a.id.0,
            Resource::Facility(f) => f.id.0,
        }
    }

    /// Sort key for search results: newest update first, then id.
    pub fn updated_at(&self) -> i64 {
        match self {
            Resource::Dataset(d) => d.updated_at,
            Resource::Analytic(a) => a.updated_at,
            Resource::Facility(f) => f.created_at,
        }
    }
}
