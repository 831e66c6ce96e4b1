//! Knowledge graph of entities, signals, topology and time-series bindings.
//!
//! A *context* is an (entity, signal) pair. Every time-series, model
//! deployment and forecast is keyed by one.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::journal::Journal;

macro_rules! id_newtype {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(EntityId);
id_newtype!(SignalId);
id_newtype!(SeriesId);
id_newtype!(EdgeId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub kind: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl Entity {
    pub fn coordinates(&self) -> Option<(f64, f64)> {
        self.latitude.zip(self.longitude)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signal {
    pub id: SignalId,
    pub name: String,
    pub unit: String,
    pub quantity: String,
}

/// Registration payload for an entity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewEntity {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub latitude: Option<f64>,
    #[serde(default)]
    pub longitude: Option<f64>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl NewEntity {
    pub fn new(name: impl Into<String>, kind: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn at(mut self, latitude: f64, longitude: f64) -> Self {
        self.latitude = Some(latitude);
        self.longitude = Some(longitude);
        self
    }
}

/// A context named by its entity and signal, as written in deployment configs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextKey {
    pub entity: String,
    pub signal: String,
}

impl ContextKey {
    pub fn new(entity: impl Into<String>, signal: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            signal: signal.into(),
        }
    }
}

impl fmt::Display for ContextKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.entity, self.signal)
    }
}

/// A fully resolved context: the entity and signal records plus the series bound to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub entity: Entity,
    pub signal: Signal,
}

impl Context {
    pub fn key(&self) -> ContextKey {
        ContextKey::new(&self.entity.name, &self.signal.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub series: SeriesId,
    #[serde(flatten)]
    pub context: Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyEdge {
    pub id: EdgeId,
    pub parent: EntityId,
    pub child: EntityId,
    pub relation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub series: SeriesId,
    pub entity: EntityId,
    pub signal: SignalId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextFilter {
    #[serde(default)]
    pub entity_kind: Option<String>,
    #[serde(default)]
    pub signal_name: Option<String>,
    #[serde(default)]
    pub under_entity: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum GraphEvent {
    Entity(Entity),
    Signal(Signal),
    Binding(Binding),
    Edge(TopologyEdge),
}

#[derive(Debug, Default)]
struct Graph {
    entities: Vec<Entity>,
    entity_by_name: HashMap<String, EntityId>,
    signals: Vec<Signal>,
    signal_by_name: HashMap<String, SignalId>,
    bindings: Vec<Binding>,
    binding_by_pair: HashMap<(EntityId, SignalId), SeriesId>,
    edges: Vec<TopologyEdge>,
    edge_by_triple: HashMap<(EntityId, EntityId, String), EdgeId>,
    children: HashMap<EntityId, Vec<EntityId>>,
}

impl Graph {
    fn apply(&mut self, event: GraphEvent) {
        match event {
            GraphEvent::Entity(e) => {
                self.entity_by_name.insert(e.name.clone(), e.id);
                self.entities.push(e);
            }
            GraphEvent::Signal(s) => {
                self.signal_by_name.insert(s.name.clone(), s.id);
                self.signals.push(s);
            }
            GraphEvent::Binding(b) => {
                self.binding_by_pair.insert((b.entity, b.signal), b.series);
                self.bindings.push(b);
            }
            GraphEvent::Edge(edge) => {
                self.edge_by_triple
                    .insert((edge.parent, edge.child, edge.relation.clone()), edge.id);
                self.children.entry(edge.parent).or_default().push(edge.child);
                self.edges.push(edge);
            }
        }
    }

    fn entity(&self, id: EntityId) -> &Entity {
        &self.entities[(id.0 - 1) as usize]
    }

    fn signal(&self, id: SignalId) -> &Signal {
        &self.signals[(id.0 - 1) as usize]
    }

    fn entity_named(&self, name: &str) -> Result<&Entity> {
        self.entity_by_name
            .get(name)
            .map(|id| self.entity(*id))
            .ok_or_else(|| Error::UnknownEntity(name.to_string()))
    }

    fn signal_named(&self, name: &str) -> Result<&Signal> {
        self.signal_by_name
            .get(name)
            .map(|id| self.signal(*id))
            .ok_or_else(|| Error::UnknownSignal(name.to_string()))
    }

    fn descendants(&self, root: EntityId) -> HashSet<EntityId> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([root]);
        while let Some(next) = queue.pop_front() {
            for child in self.children.get(&next).into_iter().flatten() {
                if seen.insert(*child) {
                    queue.push_back(*child);
                }
            }
        }
        seen.remove(&root);
        seen
    }

    fn resolve(&self, binding: &Binding) -> BoundContext {
        BoundContext {
            series: binding.series,
            context: Context {
                entity: self.entity(binding.entity).clone(),
                signal: self.signal(binding.signal).clone(),
            },
        }
    }
}

/// The semantic graph. Reads run concurrently; writes are serialized.
pub struct SemanticStore {
    graph: RwLock<Graph>,
    journal: Option<Mutex<Journal<GraphEvent>>>,
}

impl SemanticStore {
    pub fn in_memory() -> Self {
        Self {
            graph: RwLock::new(Graph::default()),
            journal: None,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (journal, events) = Journal::open(path)?;
        let mut graph = Graph::default();
        for event in events {
            graph.apply(event);
        }
        Ok(Self {
            graph: RwLock::new(graph),
            journal: Some(Mutex::new(journal)),
        })
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Graph> {
        self.graph.read().expect("semantic graph poisoned")
    }

    fn commit(&self, graph: &mut Graph, event: GraphEvent) -> Result<()> {
        if let Some(journal) = &self.journal {
            journal.lock().expect("journal poisoned").append(&event)?;
        }
        graph.apply(event);
        Ok(())
    }

    pub fn register_entity(&self, new: NewEntity) -> Result<EntityId> {
        if new.name.is_empty() {
            return Err(Error::EmptyName);
        }
        validate_coordinates(new.latitude, new.longitude)?;
        let mut graph = self.graph.write().expect("semantic graph poisoned");
        if let Some(id) = graph.entity_by_name.get(&new.name) {
            let existing = graph.entity(*id);
            let same = existing.kind == new.kind
                && existing.latitude == new.latitude
                && existing.longitude == new.longitude
                && existing.attributes == new.attributes;
            return if same {
                Ok(*id)
            } else {
                Err(Error::DuplicateName(new.name))
            };
        }
        let id = EntityId(graph.entities.len() as u64 + 1);
        let entity = Entity {
            id,
            name: new.name,
            kind: new.kind,
            latitude: new.latitude,
            longitude: new.longitude,
            attributes: new.attributes,
        };
        self.commit(&mut graph, GraphEvent::Entity(entity))?;
        Ok(id)
    }

    pub fn register_signal(&self, name: &str, unit: &str, quantity: &str) -> Result<SignalId> {
        if name.is_empty() {
            return Err(Error::EmptyName);
        }
        let mut graph = self.graph.write().expect("semantic graph poisoned");
        if let Some(id) = graph.signal_by_name.get(name) {
            let existing = graph.signal(*id);
            return if existing.unit == unit && existing.quantity == quantity {
                Ok(*id)
            } else {
                Err(Error::DuplicateName(name.to_string()))
            };
        }
        let id = SignalId(graph.signals.len() as u64 + 1);
        let signal = Signal {
            id,
            name: name.to_string(),
            unit: unit.to_string(),
            quantity: quantity.to_string(),
        };
        self.commit(&mut graph, GraphEvent::Signal(signal))?;
        Ok(id)
    }

    pub fn bind_timeseries(&self, entity_name: &str, signal_name: &str) -> Result<SeriesId> {
        let mut graph = self.graph.write().expect("semantic graph poisoned");
        let entity = graph.entity_named(entity_name)?.id;
        let signal = graph.signal_named(signal_name)?.id;
        if graph.binding_by_pair.contains_key(&(entity, signal)) {
            return Err(Error::AlreadyBound {
                entity: entity_name.to_string(),
                signal: signal_name.to_string(),
            });
        }
        let series = SeriesId(graph.bindings.len() as u64 + 1);
        self.commit(
            &mut graph,
            GraphEvent::Binding(Binding {
                series,
                entity,
                signal,
            }),
        )?;
        Ok(series)
    }

    pub fn add_topology_edge(&self, parent: &str, child: &str, relation: &str) -> Result<EdgeId> {
        let mut graph = self.graph.write().expect("semantic graph poisoned");
        let parent_id = graph.entity_named(parent)?.id;
        let child_id = graph.entity_named(child)?.id;
        if parent_id == child_id {
            return Err(Error::SelfEdge(parent.to_string()));
        }
        let triple = (parent_id, child_id, relation.to_string());
        if let Some(id) = graph.edge_by_triple.get(&triple) {
            return Ok(*id);
        }
        let id = EdgeId(graph.edges.len() as u64 + 1);
        self.commit(
            &mut graph,
            GraphEvent::Edge(TopologyEdge {
                id,
                parent: parent_id,
                child: child_id,
                relation: relation.to_string(),
            }),
        )?;
        Ok(id)
    }

    /// Bound contexts matching every provided clause, in binding order.
    /// `under_entity` matches strict topology descendants over all relations.
    pub fn query_contexts(&self, filter: &ContextFilter) -> Vec<BoundContext> {
        let graph = self.read();
        let under = match &filter.under_entity {
            Some(name) => match graph.entity_by_name.get(name) {
                Some(id) => Some(graph.descendants(*id)),
                None => return Vec::new(),
            },
            None => None,
        };
        graph
            .bindings
            .iter()
            .filter(|b| {
                let entity = graph.entity(b.entity);
                let signal = graph.signal(b.signal);
                filter.entity_kind.as_ref().is_none_or(|k| &entity.kind == k)
                    && filter.signal_name.as_ref().is_none_or(|s| &signal.name == s)
                    && under.as_ref().is_none_or(|set| set.contains(&b.entity))
            })
            .map(|b| graph.resolve(b))
            .collect()
    }

    pub fn resolve_context(&self, key: &ContextKey) -> Result<BoundContext> {
        let graph = self.read();
        let not_found = || Error::unknown_context(&key.entity, &key.signal);
        let entity = graph.entity_named(&key.entity).map_err(|_| not_found())?.id;
        let signal = graph.signal_named(&key.signal).map_err(|_| not_found())?.id;
        let series = graph
            .binding_by_pair
            .get(&(entity, signal))
            .ok_or_else(not_found)?;
        Ok(graph.resolve(&graph.bindings[(series.0 - 1) as usize]))
    }

    pub fn context_of_series(&self, series: SeriesId) -> Option<BoundContext> {
        let graph = self.read();
        let idx = series.0.checked_sub(1)? as usize;
        graph.bindings.get(idx).map(|b| graph.resolve(b))
    }

    pub fn entity(&self, name: &str) -> Result<Entity> {
        self.read().entity_named(name).cloned()
    }

    pub fn signal(&self, name: &str) -> Result<Signal> {
        self.read().signal_named(name).cloned()
    }

    pub fn entities(&self) -> Vec<Entity> {
        self.read().entities.clone()
    }

    pub fn signals(&self) -> Vec<Signal> {
        self.read().signals.clone()
    }

    pub fn edges(&self) -> Vec<TopologyEdge> {
        self.read().edges.clone()
    }

    pub fn series_count(&self) -> usize {
        self.read().bindings.len()
    }
}

fn validate_coordinates(latitude: Option<f64>, longitude: Option<f64>) -> Result<()> {
    match (latitude, longitude) {
        (None, None) => Ok(()),
        (Some(lat), Some(lon)) => {
            if !(-90.0..=90.0).contains(&lat) {
                Err(Error::InvalidCoordinates(format!("latitude {lat} outside [-90, 90]")))
            } else if !(-180.0..=180.0).contains(&lon) {
                Err(Error::InvalidCoordinates(format!("longitude {lon} outside [-180, 180]")))
            } else {
                Ok(())
            }
        }
        _ => Err(Error::InvalidCoordinates(
            "latitude and longitude must be given together".into(),
        )),
    }
}
