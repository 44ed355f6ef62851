use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::knowledge::MetaAction;
use crate::numeric::{Checkpoint, CheckpointError, NumericError};
use crate::rng::{self, tag};

use super::{ConvPolicy, MetaPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Kix1,
    Kix2,
    Base,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Kix1, Variant::Kix2, Variant::Base];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Kix1 => "kix1",
            Variant::Kix2 => "kix2",
            Variant::Base => "base",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant `{s}` (expected kix1, kix2 or base)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetKind {
    Meta,
    Interaction(MetaAction),
    Reach,
    Base,
}

impl NetKind {
    pub fn key(self) -> String {
        match self {
            NetKind::Meta => "meta".into(),
            NetKind::Interaction(a) => format!("interaction.{}", a.name()),
            NetKind::Reach => "reach".into(),
            NetKind::Base => "base".into(),
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "meta" => Some(NetKind::Meta),
            "reach" => Some(NetKind::Reach),
            "base" => Some(NetKind::Base),
            _ => key.strip_prefix("interaction.").and_then(MetaAction::from_name).map(NetKind::Interaction),
        }
    }

    /// Architecture label written to checkpoint manifests.
    pub fn architecture(self) -> &'static str {
        match self {
            NetKind::Meta => "gat",
            NetKind::Base => "conv3",
            _ => "conv4",
        }
    }

    fn init_stream(self) -> u64 {
        match self {
            NetKind::Meta => 0,
            NetKind::Interaction(a) => 1 + a.index() as u64,
            NetKind::Reach => 10,
            NetKind::Base => 11,
        }
    }
}

/// All networks of one agent variant.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRepository {
    variant: Variant,
    meta: Option<MetaPolicy>,
    interactions: Vec<ConvPolicy>,
    reach: Option<ConvPolicy>,
    base: Option<ConvPolicy>,
}

impl PolicyRepository {
    pub fn new(variant: Variant, seed: u64) -> Result<Self, NumericError> {
        let stream = |k: NetKind| rng::stream(seed, &[tag::INIT, k.init_stream()]);
        let conv4 = |k: NetKind| ConvPolicy::new(4, Action::COUNT, &mut stream(k));
        let mut repo = Self {
            variant,
            meta: None,
            interactions: Vec::new(),
            reach: None,
            base: None,
        };
        match variant {
            Variant::Base => repo.base = Some(ConvPolicy::new(3, Action::COUNT, &mut stream(NetKind::Base))?),
            Variant::Kix1 | Variant::Kix2 => {
                repo.meta = Some(MetaPolicy::new(&mut stream(NetKind::Meta))?);
                for a in MetaAction::ALL {
                    repo.interactions.push(conv4(NetKind::Interaction(a))?);
                }
                if variant == Variant::Kix2 {
                    repo.reach = Some(conv4(NetKind::Reach)?);
                }
            }
        }
        Ok(repo)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Keys of the networks present, in canonical order.
    pub fn kinds(&self) -> Vec<NetKind> {
        let mut k = Vec::new();
        if self.meta.is_some() {
            k.push(NetKind::Meta);
            k.extend(MetaAction::ALL.map(NetKind::Interaction));
        }
        if self.reach.is_some() {
            k.push(NetKind::Reach);
        }
        if self.base.is_some() {
            k.push(NetKind::Base);
        }
        k
    }

    pub fn meta(&self) -> Option<&MetaPolicy> {
        self.meta.as_ref()
    }

    pub fn meta_mut(&mut self) -> Option<&mut MetaPolicy> {
        self.meta.as_mut()
    }

    pub fn interaction(&self, a: MetaAction) -> Option<&ConvPolicy> {
        self.interactions.get(a.index())
    }

    pub fn interaction_mut(&mut self, a: MetaAction) -> Option<&mut ConvPolicy> {
        self.interactions.get_mut(a.index())
    }

    pub fn reach(&self) -> Option<&ConvPolicy> {
        self.reach.as_ref()
    }

    pub fn reach_mut(&mut self) -> Option<&mut ConvPolicy> {
        self.reach.as_mut()
    }

    pub fn base(&self) -> Option<&ConvPolicy> {
        self.base.as_ref()
    }

    pub fn base_mut(&mut self) -> Option<&mut ConvPolicy> {
        self.base.as_mut()
    }

    /// Low-level conv net by kind (not the meta net).
    pub fn conv(&self, kind: NetKind) -> Option<&ConvPolicy> {
        match kind {
            NetKind::Interaction(a) => self.interaction(a),
            NetKind::Reach => self.reach(),
            NetKind::Base => self.base(),
            NetKind::Meta => None,
        }
    }

    pub fn conv_mut(&mut self, kind: NetKind) -> Option<&mut ConvPolicy> {
        match kind {
            NetKind::Interaction(a) => self.interaction_mut(a),
            NetKind::Reach => self.reach_mut(),
            NetKind::Base => self.base_mut(),
            NetKind::Meta => None,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.push(("variant".into(), self.variant.name().into()));
        for kind in self.kinds() {
            ck.meta.push((format!("net.{}", kind.key()), kind.architecture().into()));
            let params = match kind {
                NetKind::Meta => self.meta.as_ref().expect("present").params().clone(),
                k => self.conv(k).expect("present").params().clone(),
            };
            ck.sets.push((kind.key(), params));
        }
        ck
    }

    /// Restores a repository, checking the manifest against `expected` when given.
    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<Variant>) -> Result<Self, CheckpointError> {
        let manifest = |m: String| CheckpointError::Manifest(m);
        let variant: Variant = ck
            .meta_value("variant")
            .ok_or_else(|| manifest("no variant recorded".into()))?
            .parse()
            .map_err(manifest)?;
        if let Some(e) = expected {
            if e != variant {
                return Err(manifest(format!("checkpoint holds a {variant} agent, expected {e}")));
            }
        }
        let mut repo = Self {
            variant,
            meta: None,
            interactions: Vec::new(),
            reach: None,
            base: None,
        };
        let wanted: Vec<NetKind> = match variant {
            Variant::Base => vec![NetKind::Base],
            v => {
                let mut k = vec![NetKind::Meta];
                k.extend(MetaAction::ALL.map(NetKind::Interaction));
                if v == Variant::Kix2 {
                    k.push(NetKind::Reach);
                }
                k
            }
        };
        let present: Vec<&str> = ck.sets.iter().map(|(n, _)| n.as_str()).collect();
        let wanted_keys: Vec<String> = wanted.iter().map(|k| k.key()).collect();
        if present != wanted_keys.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(manifest(format!("{variant} expects nets {wanted_keys:?}, found {present:?}")));
        }
        let bad = |k: NetKind, e: NumericError| manifest(format!("net {}: {e}", k.key()));
        for kind in wanted {
            if ck.meta_value(&format!("net.{}", kind.key())) != Some(kind.architecture()) {
                return Err(manifest(format!("net {} has the wrong architecture label", kind.key())));
            }
            let params = ck.set(&kind.key()).expect("checked").clone();
            match kind {
                NetKind::Meta => repo.meta = Some(MetaPolicy::from_params(params).map_err(|e| bad(kind, e))?),
                _ => {
                    let net = ConvPolicy::from_params(params).map_err(|e| bad(kind, e))?;
                    let channels = if kind == NetKind::Base { 3 } else { 4 };
                    if net.in_channels() != channels || net.actions() != Action::COUNT {
                        return Err(manifest(format!("net {} has the wrong input or output size", kind.key())));
                    }
                    match kind {
                        NetKind::Interaction(_) => repo.interactions.push(net),
                        NetKind::Reach => repo.reach = Some(net),
                        _ => repo.base = Some(net),
                    }
                }
            }
        }
        Ok(repo)
    }
}
