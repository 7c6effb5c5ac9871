use std::collections::HashMap;
use std::net::TcpListener;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::model::ProjectId;

pub const DEFAULT_PORT_RANGE: (u16, u16) = (4300, 4399);

/// Hands out (frontend, backend) port pairs from an inclusive range. A
/// project keeps its pair while the ports stay free.
#[derive(Debug)]
pub struct PortAllocator {
    first: u16,
    last: u16,
    host: String,
    assigned: Mutex<HashMap<ProjectId, (u16, u16)>>,
}

impl PortAllocator {
    pub fn new(range: (u16, u16), host: &str) -> Result<Self> {
        let (first, last) = range;
        if first == 0 || last < first.saturating_add(1) {
            return Err(Error::config(format!("port range {first}-{last} must hold at least two ports")));
        }
        Ok(PortAllocator {
            first,
            last,
            host: host.to_string(),
            assigned: Mutex::new(HashMap::new()),
        })
    }

    fn bindable(&self, port: u16) -> bool {
        TcpListener::bind((self.host.as_str(), port)).is_ok()
    }

    pub fn allocate(&self, project: &ProjectId) -> Result<(u16, u16)> {
        let mut assigned = self.assigned.lock().expect("port table poisoned");
        if let Some(&(f, b)) = assigned.get(project) {
            if self.bindable(f) && self.bindable(b) {
                return Ok((f, b));
            }
            assigned.remove(project);
        }
        let taken: Vec<u16> = assigned.values().flat_map(|&(f, b)| [f, b]).collect();
        let mut port = self.first;
        while port < self.last {
            let pair = (port, port + 1);
            if !taken.contains(&pair.0) && !taken.contains(&pair.1) && self.bindable(pair.0) && self.bindable(pair.1) {
                assigned.insert(project.clone(), pair);
                return Ok(pair);
            }
            port = port.saturating_add(2);
        }
        Err(Error::PortConflict(format!(
            "no free port pair in {}-{} on {}",
            self.first, self.last, self.host
        )))
    }

    pub fn release(&self, project: &ProjectId) {
        self.assigned.lock().expect("port table poisoned").remove(project);
    }
}
