use thiserror::Error;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("agent {agent} is not authorized to {action} {topic}")]
    Auth {
        agent: String,
        action: &'static str,
        topic: String,
    },
    #[error("payload rejected: {0}")]
    Schema(String),
    #[error("invalid topic: {0}")]
    Topic(String),
    #[error("timeout advancing to stage {stage}; no acknowledgment from {laggards:?}")]
    StageTimeout {
        stage: String,
        laggards: Vec<String>,
    },
    #[error("agent {0} is not registered on the bus")]
    UnknownAgent(String),
    #[error("transport error: {0}")]
    Transport(String),
}
