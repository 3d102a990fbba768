use std::sync::{Arc, Mutex};

use super::Operator;
use crate::agents::Agent;
use crate::error::{Error, Result};
use crate::msg::Message;

/// A broadcast context: whatever a participant says through the hub is
/// observed by every other current participant, in insertion order.
pub struct MsgHub {
    participants: Mutex<Vec<Arc<dyn Agent>>>,
    turn: Mutex<()>,
}

impl std::fmt::Debug for MsgHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MsgHub").field("participants", &self.participants()).finish()
    }
}

impl MsgHub {
    /// Opens a hub; every participant observes the announcements.
    pub fn enter(participants: Vec<Arc<dyn Agent>>, announcements: &[Message]) -> Result<Arc<Self>> {
        let hub = Arc::new(Self {
            participants: Mutex::new(Vec::new()),
            turn: Mutex::new(()),
        });
        for p in participants {
            hub.add(p)?;
        }
        for a in announcements {
            hub.broadcast(a)?;
        }
        Ok(hub)
    }

    pub fn participants(&self) -> Vec<String> {
        self.participants.lock().unwrap().iter().map(|a| a.name().to_string()).collect()
    }

    pub fn add(&self, agent: Arc<dyn Agent>) -> Result<()> {
        let mut ps = self.participants.lock().unwrap();
        if ps.iter().any(|p| p.name() == agent.name()) {
            return Err(Error::validation(format!("'{}' is already in the hub", agent.name())));
        }
        ps.push(agent);
        Ok(())
    }

    pub fn delete(&self, name: &str) -> Result<()> {
        let mut ps = self.participants.lock().unwrap();
        let before = ps.len();
        ps.retain(|p| p.name() != name);
        if ps.len() == before {
            return Err(Error::validation(format!("'{name}' is not in the hub")));
        }
        Ok(())
    }

    fn deliver(&self, m: &Message, skip: Option<&str>) -> Result<()> {
        let targets: Vec<Arc<dyn Agent>> = self.participants.lock().unwrap().clone();
        for t in targets.iter().filter(|t| Some(t.name()) != skip) {
            t.observe(m)?;
        }
        Ok(())
    }

    /// Delivers `m` to every current participant.
    pub fn broadcast(&self, m: &Message) -> Result<()> {
        let _turn = self.turn.lock().unwrap();
        self.deliver(m, None)
    }

    /// `agent` replies to `x`; the reply goes to everyone else.
    pub fn speak(&self, name: &str, x: Option<&Message>) -> Result<Message> {
        let _turn = self.turn.lock().unwrap();
        let agent = self
            .participants
            .lock()
            .unwrap()
            .iter()
            .find(|p| p.name() == name)
            .cloned()
            .ok_or_else(|| Error::validation(format!("'{name}' is not a hub participant")))?;
        let reply = agent.reply(x)?;
        self.deliver(&reply, Some(name))?;
        Ok(reply)
    }

    /// An operator that speaks as `name` through this hub.
    pub fn speaker(self: &Arc<Self>, name: impl Into<String>) -> Arc<HubSpeaker> {
        Arc::new(HubSpeaker {
            hub: self.clone(),
            name: name.into(),
        })
    }
}

pub struct HubSpeaker {
    hub: Arc<MsgHub>,
    name: String,
}

impl Operator for HubSpeaker {
    fn call(&self, x: Option<Message>) -> Result<Option<Message>> {
        self.hub.speak(&self.name, x.as_ref()).map(Some)
    }
}
