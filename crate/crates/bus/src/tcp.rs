//! Networked bus mode: a TCP broker speaking length-prefixed JSON frames,
//! delivering at-least-once with client-side sequence-number deduplication.
//! Authorization, validation, sequencing, and logging all go through the
//! same `BrokerCore` as the deterministic mode.

use std::collections::{HashMap, HashSet};
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::acl::AuthPolicy;
use crate::audit::AuditRecord;
use crate::broker::BrokerCore;
use crate::envelope::MessageEnvelope;
use crate::error::BusError;
use crate::framing::{read_frame, write_frame};
use crate::port::BusPort;
use crate::topic::{Topic, TopicPattern};

const RESPONSE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum ClientFrame {
    Hello { agent_id: String },
    Publish { topic: String, payload: Value },
    Subscribe { pattern: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum ServerFrame {
    HelloOk,
    PublishOk { sequence_number: u64 },
    SubscribeOk { subscription_id: u64 },
    Denied { code: String, message: String },
    Deliver { envelope: MessageEnvelope },
}

fn denial(err: &BusError) -> ServerFrame {
    let code = match err {
        BusError::Auth { .. } => "auth",
        BusError::Schema(_) => "schema",
        BusError::Topic(_) => "topic",
        _ => "transport",
    };
    ServerFrame::Denied {
        code: code.into(),
        message: err.to_string(),
    }
}

struct ServerState {
    core: BrokerCore,
    writers: HashMap<String, TcpStream>,
}

/// Snapshot of the broker's logs after a run.
#[derive(Debug, Clone)]
pub struct BrokerLogs {
    pub messages: Vec<MessageEnvelope>,
    pub audit: Vec<AuditRecord>,
}

pub struct TcpBroker {
    local_addr: SocketAddr,
    state: Arc<Mutex<ServerState>>,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl TcpBroker {
    /// Bind and start serving. `addr` may use port 0 for an ephemeral port;
    /// the bound address is available via `local_addr`.
    pub fn start(addr: impl ToSocketAddrs, policy: AuthPolicy) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let state = Arc::new(Mutex::new(ServerState {
            core: BrokerCore::new(policy),
            writers: HashMap::new(),
        }));
        let shutdown = Arc::new(AtomicBool::new(false));

        let accept_state = Arc::clone(&state);
        let accept_shutdown = Arc::clone(&shutdown);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(conn) => {
                        let state = Arc::clone(&accept_state);
                        std::thread::spawn(move || {
                            if let Err(e) = serve_connection(conn, state) {
                                log::debug!("connection ended: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        });

        Ok(Self {
            local_addr,
            state,
            shutdown,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn logs(&self) -> BrokerLogs {
        let state = self.state.lock().expect("broker state");
        BrokerLogs {
            messages: state.core.message_log().to_vec(),
            audit: state.core.audit().records().to_vec(),
        }
    }

    /// Stop accepting and return the final logs. Established connections
    /// finish when their clients disconnect.
    pub fn shutdown(mut self) -> BrokerLogs {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
        self.logs()
    }
}

impl Drop for TcpBroker {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn serve_connection(mut conn: TcpStream, state: Arc<Mutex<ServerState>>) -> io::Result<()> {
    let hello: ClientFrame = read_frame(&mut conn)?;
    let ClientFrame::Hello { agent_id } = hello else {
        write_frame(
            &mut conn,
            &ServerFrame::Denied {
                code: "transport".into(),
                message: "expected hello".into(),
            },
        )?;
        return Ok(());
    };
    {
        let mut st = state.lock().expect("broker state");
        let writer = conn.try_clone()?;
        st.writers.insert(agent_id.clone(), writer);
        write_frame(st.writers.get_mut(&agent_id).expect("just inserted"), &ServerFrame::HelloOk)?;
    }

    loop {
        let frame: ClientFrame = match read_frame(&mut conn) {
            Ok(f) => f,
            Err(_) => break, // client gone
        };
        let mut st = state.lock().expect("broker state");
        match frame {
            ClientFrame::Hello { .. } => {
                respond(&mut st, &agent_id, &ServerFrame::Denied {
                    code: "transport".into(),
                    message: "duplicate hello".into(),
                });
            }
            ClientFrame::Publish { topic, payload } => {
                let reply = match Topic::parse(&topic) {
                    Ok(t) => match st.core.publish(&agent_id, &t, payload) {
                        Ok(outcome) => {
                            let mut dead: Vec<String> = Vec::new();
                            for recipient in &outcome.recipients {
                                if let Some(w) = st.writers.get_mut(recipient) {
                                    let deliver = ServerFrame::Deliver {
                                        envelope: outcome.envelope.clone(),
                                    };
                                    if write_frame(w, &deliver).is_err() {
                                        dead.push(recipient.clone());
                                    }
                                }
                            }
                            for d in dead {
                                st.writers.remove(&d);
                            }
                            ServerFrame::PublishOk {
                                sequence_number: outcome.sequence_number,
                            }
                        }
                        Err(e) => denial(&e),
                    },
                    Err(e) => denial(&e),
                };
                respond(&mut st, &agent_id, &reply);
            }
            ClientFrame::Subscribe { pattern } => {
                let reply = match TopicPattern::parse(&pattern) {
                    Ok(p) => match st.core.subscribe(&agent_id, &p) {
                        Ok(id) => ServerFrame::SubscribeOk {
                            subscription_id: id,
                        },
                        Err(e) => denial(&e),
                    },
                    Err(e) => denial(&e),
                };
                respond(&mut st, &agent_id, &reply);
            }
        }
    }
    let mut st = state.lock().expect("broker state");
    st.writers.remove(&agent_id);
    Ok(())
}

fn respond(st: &mut ServerState, agent: &str, frame: &ServerFrame) {
    if let Some(w) = st.writers.get_mut(agent) {
        if write_frame(w, frame).is_err() {
            st.writers.remove(agent);
        }
    }
}

/// Client side of the networked bus. Implements the same `BusPort` surface
/// as the deterministic handle; received envelopes are deduplicated by
/// (sender, topic, sequence number).
pub struct TcpBusClient {
    agent: String,
    writer: TcpStream,
    inbox: Receiver<MessageEnvelope>,
    responses: Receiver<ServerFrame>,
    seen: HashSet<(String, String, u64)>,
}

impl TcpBusClient {
    pub fn connect(addr: impl ToSocketAddrs, agent: impl Into<String>) -> Result<Self, BusError> {
        let agent = agent.into();
        let mut stream = TcpStream::connect(addr).map_err(transport)?;
        write_frame(
            &mut stream,
            &ClientFrame::Hello {
                agent_id: agent.clone(),
            },
        )
        .map_err(transport)?;
        let hello: ServerFrame = read_frame(&mut stream).map_err(transport)?;
        if !matches!(hello, ServerFrame::HelloOk) {
            return Err(BusError::Transport("handshake rejected".into()));
        }

        let writer = stream.try_clone().map_err(transport)?;
        let (inbox_tx, inbox): (Sender<MessageEnvelope>, _) = channel();
        let (resp_tx, responses): (Sender<ServerFrame>, _) = channel();
        let mut reader = stream;
        std::thread::spawn(move || loop {
            match read_frame::<_, ServerFrame>(&mut reader) {
                Ok(ServerFrame::Deliver { envelope }) => {
                    if inbox_tx.send(envelope).is_err() {
                        break;
                    }
                }
                Ok(other) => {
                    if resp_tx.send(other).is_err() {
                        break;
                    }
                }
                Err(_) => break,
            }
        });

        Ok(Self {
            agent,
            writer,
            inbox,
            responses,
            seen: HashSet::new(),
        })
    }

    fn request(&mut self, frame: &ClientFrame) -> Result<ServerFrame, BusError> {
        write_frame(&mut self.writer, frame).map_err(transport)?;
        self.responses
            .recv_timeout(RESPONSE_TIMEOUT)
            .map_err(|_| BusError::Transport("no response from broker".into()))
    }

    fn map_denial(&self, frame: ServerFrame, topic: String) -> BusError {
        match frame {
            ServerFrame::Denied { code, message } => match code.as_str() {
                "auth" => BusError::Auth {
                    agent: self.agent.clone(),
                    action: "use",
                    topic,
                },
                "schema" => BusError::Schema(message),
                "topic" => BusError::Topic(message),
                _ => BusError::Transport(message),
            },
            other => BusError::Transport(format!("unexpected response {other:?}")),
        }
    }
}

fn transport(e: io::Error) -> BusError {
    BusError::Transport(e.to_string())
}

impl BusPort for TcpBusClient {
    fn agent_id(&self) -> &str {
        &self.agent
    }

    fn publish(&mut self, topic: &Topic, payload: Value) -> Result<u64, BusError> {
        let reply = self.request(&ClientFrame::Publish {
            topic: topic.to_string(),
            payload,
        })?;
        match reply {
            ServerFrame::PublishOk { sequence_number } => Ok(sequence_number),
            other => Err(self.map_denial(other, topic.to_string())),
        }
    }

    fn subscribe(&mut self, pattern: &TopicPattern) -> Result<u64, BusError> {
        let reply = self.request(&ClientFrame::Subscribe {
            pattern: pattern.to_string(),
        })?;
        match reply {
            ServerFrame::SubscribeOk { subscription_id } => Ok(subscription_id),
            other => Err(self.map_denial(other, pattern.to_string())),
        }
    }

    fn poll(&mut self, timeout: Option<Duration>) -> Result<Option<MessageEnvelope>, BusError> {
        let deadline = timeout.map(|t| std::time::Instant::now() + t);
        loop {
            let env = match deadline {
                None => match self.inbox.try_recv() {
                    Ok(env) => env,
                    Err(_) => return Ok(None),
                },
                Some(d) => {
                    let now = std::time::Instant::now();
                    if now >= d {
                        return Ok(None);
                    }
                    match self.inbox.recv_timeout(d - now) {
                        Ok(env) => env,
                        Err(RecvTimeoutError::Timeout) => return Ok(None),
                        Err(RecvTimeoutError::Disconnected) => {
                            return Err(BusError::Transport("broker connection lost".into()))
                        }
                    }
                }
            };
            let key = (
                env.sender_id.clone(),
                env.topic.to_string(),
                env.sequence_number,
            );
            if self.seen.insert(key) {
                return Ok(Some(env));
            }
            // Duplicate delivery: drop and keep polling.
        }
    }
}
