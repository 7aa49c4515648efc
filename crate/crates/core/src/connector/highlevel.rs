use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::protocol::{
    ConnectionState, Direction, Fault, InstrumentMetadata, SyncClass, Value, VariableDescriptor, WireType,
};

use super::lowlevel::Connector;
use super::transport::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkDirection {
    /// Indicator to local variable.
    Read,
    /// Local variable to control.
    Write,
}

impl LinkDirection {
    fn expects(self) -> Direction {
        match self {
            LinkDirection::Read => Direction::Indicator,
            LinkDirection::Write => Direction::Control,
        }
    }
}

/// One binding between a client variable and an instrument variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub local: String,
    pub remote: String,
    pub dir: LinkDirection,
    #[serde(rename = "type")]
    pub wire_type: WireType,
    pub sync: SyncClass,
}

impl Link {
    pub fn read(local: &str, remote: &str, wire_type: WireType, sync: SyncClass) -> Self {
        Self {
            local: local.to_owned(),
            remote: remote.to_owned(),
            dir: LinkDirection::Read,
            wire_type,
            sync,
        }
    }

    pub fn write(local: &str, remote: &str, wire_type: WireType, sync: SyncClass) -> Self {
        Self {
            dir: LinkDirection::Write,
            ..Self::read(local, remote, wire_type, sync)
        }
    }
}

/// Declarative description of a remote experiment: where the server is,
/// which instrument to open and how its variables map to local names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkTable {
    pub server: String,
    pub vi: String,
    #[serde(default)]
    pub links: Vec<Link>,
}

impl LinkTable {
    /// Structural problems: empty fields, duplicate local names, duplicate
    /// remote names within one direction.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.server.is_empty() {
            out.push("server address is empty".to_owned());
        }
        if self.vi.is_empty() {
            out.push("instrument path is empty".to_owned());
        }
        let mut locals = HashSet::new();
        let mut remotes = HashSet::new();
        let mut dup_locals = Vec::new();
        let mut dup_remotes = Vec::new();
        for link in &self.links {
            if !locals.insert(link.local.as_str()) && !dup_locals.contains(&link.local) {
                dup_locals.push(link.local.clone());
            }
            if !remotes.insert((link.dir, link.remote.as_str())) && !dup_remotes.contains(&link.remote) {
                dup_remotes.push(link.remote.clone());
            }
        }
        out.extend(dup_locals.into_iter().map(|n| format!("duplicate local name '{n}'")));
        out.extend(dup_remotes.into_iter().map(|n| format!("remote '{n}' linked twice in the same direction")));
        out
    }

    pub fn link(&self, local: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.local == local)
    }

    /// Mismatches between the links and the instrument's published
    /// variables, one message per bad link.
    pub fn check_against(&self, meta: &InstrumentMetadata) -> Vec<String> {
        let mut out = Vec::new();
        for link in &self.links {
            let Some(desc) = meta.variable(&link.remote) else {
                out.push(format!("link '{}': unknown remote variable '{}'", link.local, link.remote));
                continue;
            };
            if desc.direction != link.dir.expects() {
                out.push(format!(
                    "link '{}': '{}' is {:?}, cannot be used as a {:?} link",
                    link.local, link.remote, desc.direction, link.dir
                ));
            }
            if desc.wire_type != link.wire_type {
                out.push(format!(
                    "link '{}': '{}' has type {}, link declares {}",
                    link.local, link.remote, desc.wire_type, link.wire_type
                ));
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConnectorError {
    #[error(transparent)]
    Fault(#[from] Fault),
    #[error("invalid link table: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("link '{link}': {fault}")]
    Link { link: String, fault: Fault },
    #[error("no local value for write link '{0}'")]
    MissingLocal(String),
    #[error("'{0}' is not a write link")]
    NotWriteLink(String),
}

impl ConnectorError {
    /// The protocol fault behind this error, if there is one.
    pub fn fault(&self) -> Option<&Fault> {
        match self {
            ConnectorError::Fault(f) | ConnectorError::Link { fault: f, .. } => Some(f),
            _ => None,
        }
    }
}

/// High-level session driven by a link table: `connect` opens and runs the
/// instrument, `step` synchronizes the synchronous links, `disconnect` tears
/// everything down.
pub struct HighLevelSession<T> {
    table: LinkTable,
    connector: Connector<T>,
    metadata: Option<InstrumentMetadata>,
}

impl<T: Transport> HighLevelSession<T> {
    pub fn configure(table: LinkTable, transport: T) -> Result<Self, ConnectorError> {
        let problems = table.problems();
        if !problems.is_empty() {
            return Err(ConnectorError::Config(problems));
        }
        let mut connector = Connector::new(transport);
        connector.set_server_address(table.server.clone());
        Ok(Self {
            table,
            connector,
            metadata: None,
        })
    }

    pub fn table(&self) -> &LinkTable {
        &self.table
    }

    pub fn state(&self) -> ConnectionState {
        self.connector.state()
    }

    /// Metadata fetched by the last successful `connect`.
    pub fn metadata(&self) -> Option<&InstrumentMetadata> {
        self.metadata.as_ref()
    }

    /// Published descriptor of the variable behind a local name.
    pub fn descriptor(&self, local: &str) -> Option<&VariableDescriptor> {
        let link = self.table.link(local)?;
        self.metadata.as_ref()?.variable(&link.remote)
    }

    pub fn connector(&self) -> &Connector<T> {
        &self.connector
    }

    pub fn connector_mut(&mut self) -> &mut Connector<T> {
        &mut self.connector
    }

    /// connect, openVI, getMetadata, link validation, runVI. Any failure
    /// leaves the session Disconnected.
    pub fn connect(&mut self) -> Result<(), ConnectorError> {
        self.connector.connect()?;
        let result = self.open_and_run();
        if result.is_err() {
            self.teardown();
        }
        result
    }

    fn open_and_run(&mut self) -> Result<(), ConnectorError> {
        self.connector.open_vi(&self.table.vi)?;
        let doc = self.connector.get_metadata()?;
        let meta = InstrumentMetadata::from_json(&doc)
            .map_err(|e| Fault::internal(format!("unreadable metadata: {e}")))?;
        let problems = self.table.check_against(&meta);
        if !problems.is_empty() {
            return Err(ConnectorError::Config(problems));
        }
        self.metadata = Some(meta);
        self.connector.run_vi()?;
        Ok(())
    }

    /// Pushes every synchronous write link, pulls every synchronous read
    /// link and sends one heartbeat. Returns the updated copy of `locals`;
    /// on error nothing is returned, so the caller's map is untouched.
    pub fn step(&mut self, locals: &BTreeMap<String, Value>) -> Result<BTreeMap<String, Value>, ConnectorError> {
        self.require_running()?;
        let writes: Vec<(Link, Value)> = self
            .sync_links(LinkDirection::Write)
            .map(|l| {
                locals
                    .get(&l.local)
                    .map(|v| (l.clone(), v.clone()))
                    .ok_or_else(|| ConnectorError::MissingLocal(l.local.clone()))
            })
            .collect::<Result<_, _>>()?;
        let reads: Vec<Link> = self.sync_links(LinkDirection::Read).cloned().collect();
        for (link, value) in writes {
            self.push(&link, value)?;
        }
        let mut next = locals.clone();
        for link in reads {
            let v = self.pull(&link)?;
            next.insert(link.local, v);
        }
        self.connector.heartbeat()?;
        Ok(next)
    }

    /// Pulls every read link regardless of sync class.
    pub fn get_values(&mut self) -> Result<BTreeMap<String, Value>, ConnectorError> {
        self.require_running()?;
        let reads: Vec<Link> = self
            .table
            .links
            .iter()
            .filter(|l| l.dir == LinkDirection::Read)
            .cloned()
            .collect();
        let mut out = BTreeMap::new();
        for link in reads {
            let v = self.pull(&link)?;
            out.insert(link.local, v);
        }
        Ok(out)
    }

    /// Pushes exactly the named write links.
    pub fn set_values(&mut self, subset: &BTreeMap<String, Value>) -> Result<(), ConnectorError> {
        self.require_running()?;
        let writes: Vec<(Link, Value)> = subset
            .iter()
            .map(|(name, v)| match self.table.link(name) {
                Some(l) if l.dir == LinkDirection::Write => Ok((l.clone(), v.clone())),
                _ => Err(ConnectorError::NotWriteLink(name.clone())),
            })
            .collect::<Result<_, _>>()?;
        for (link, value) in writes {
            self.push(&link, value)?;
        }
        Ok(())
    }

    pub fn heartbeat(&mut self) -> Result<(), ConnectorError> {
        Ok(self.connector.heartbeat()?)
    }

    /// Advances a lockstep server by `n` instrument periods.
    pub fn tick(&mut self, n: i32) -> Result<(), ConnectorError> {
        self.require_running()?;
        Ok(self.connector.tick(n)?)
    }

    /// Best-effort stop, close and disconnect. Always ends Disconnected.
    pub fn disconnect(&mut self) {
        self.teardown();
    }

    fn teardown(&mut self) {
        let c = &mut self.connector;
        let mut steps: Vec<(&str, fn(&mut Connector<T>) -> Result<(), Fault>)> = Vec::new();
        if c.state() == ConnectionState::Running {
            steps.push(("stopVI", Connector::stop_vi));
        }
        if c.state() >= ConnectionState::Opened {
            steps.push(("closeVI", Connector::close_vi));
        }
        if c.state() >= ConnectionState::Connected {
            steps.push(("disconnect", Connector::disconnect));
        }
        for (what, f) in steps {
            if let Err(e) = f(c) {
                log::warn!("teardown {what}: {e}");
                if c.state() == ConnectionState::Disconnected {
                    break;
                }
            }
        }
        c.reset();
    }

    fn require_running(&self) -> Result<(), Fault> {
        match self.connector.state() {
            ConnectionState::Running => Ok(()),
            s => Err(Fault::wrong_state(format!("session is {s}, not running"))),
        }
    }

    fn sync_links(&self, dir: LinkDirection) -> impl Iterator<Item = &Link> {
        self.table
            .links
            .iter()
            .filter(move |l| l.dir == dir && l.sync == SyncClass::Synchronous)
    }

    fn push(&mut self, link: &Link, value: Value) -> Result<(), ConnectorError> {
        let value = match (value, link.wire_type) {
            (Value::Double(v), WireType::Float) => Value::Float(v as f32),
            (Value::Int(v), WireType::Double) => Value::Double(f64::from(v)),
            (v, _) => v,
        };
        self.connector
            .set_value(&link.remote, value)
            .map_err(|fault| ConnectorError::Link {
                link: link.local.clone(),
                fault,
            })
    }

    fn pull(&mut self, link: &Link) -> Result<Value, ConnectorError> {
        self.connector
            .get_value(&link.remote, link.wire_type)
            .map_err(|fault| ConnectorError::Link {
                link: link.local.clone(),
                fault,
            })
    }
}
