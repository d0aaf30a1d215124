//! Engine side of the protocol: dial the gateway, handshake, serve requests.

use std::time::Instant;

use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
use tracing::{debug, info, warn};

use super::{
    EngineDescriptor, HandshakeAck, InferReply, InferRequest, MockBehavior, MockEngine,
    MockOutcome, ProtocolError,
};

#[derive(Debug, Error)]
pub enum EngineClientError {
    #[error("gateway unreachable: {0}")]
    GatewayUnreachable(String),
    #[error("gateway rejected engine: {error} ({detail})")]
    Rejected { error: String, detail: String },
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("engine crashed as scripted after {served} requests")]
    Crashed { served: u64 },
}

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// A registered connection to the gateway.
pub struct EngineConnection {
    ws: Socket,
    descriptor: EngineDescriptor,
}

impl EngineConnection {
    /// Dials `url` (e.g. `ws://127.0.0.1:8780/engine`) and registers.
    pub async fn connect(
        url: &str,
        descriptor: EngineDescriptor,
    ) -> Result<Self, EngineClientError> {
        let (mut ws, _) = connect_async(url)
            .await
            .map_err(|e| EngineClientError::GatewayUnreachable(format!("{url}: {e}")))?;
        let text = serde_json::to_string(&descriptor).expect("descriptor is serializable");
        ws.send(Message::Text(text))
            .await
            .map_err(|e| EngineClientError::ConnectionLost(e.to_string()))?;
        loop {
            match ws.next().await {
                Some(Ok(Message::Text(text))) => {
                    let ack: HandshakeAck = serde_json::from_str(&text)
                        .map_err(|e| ProtocolError::BadReply(format!("handshake ack: {e}")))?;
                    return match ack {
                        HandshakeAck::Registered => {
                            info!(engine = %descriptor.name, "registered with gateway");
                            Ok(EngineConnection { ws, descriptor })
                        }
                        HandshakeAck::Rejected { error, detail } => {
                            Err(EngineClientError::Rejected { error, detail })
                        }
                    };
                }
                Some(Ok(Message::Close(_))) | None => {
                    return Err(EngineClientError::ConnectionLost(
                        "closed during handshake".into(),
                    ))
                }
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(EngineClientError::ConnectionLost(e.to_string())),
            }
        }
    }

    pub fn descriptor(&self) -> &EngineDescriptor {
        &self.descriptor
    }

    /// Next infer request, or `None` once the gateway closes the connection.
    pub async fn next_request(&mut self) -> Result<Option<InferRequest>, EngineClientError> {
        loop {
            match self.ws.next().await {
                Some(Ok(Message::Binary(bytes))) => return Ok(Some(InferRequest::decode(&bytes)?)),
                Some(Ok(Message::Close(_))) | None => return Ok(None),
                Some(Ok(other)) => debug!(?other, "ignoring non-request message"),
                Some(Err(e)) => return Err(EngineClientError::ConnectionLost(e.to_string())),
            }
        }
    }

    pub async fn send_reply(&mut self, reply: &InferReply) -> Result<(), EngineClientError> {
        let text = serde_json::to_string(reply).expect("reply is serializable");
        self.ws
            .send(Message::Text(text))
            .await
            .map_err(|e| EngineClientError::ConnectionLost(e.to_string()))
    }

    /// Keeps the connection open without answering anything.
    pub async fn idle(&mut self) {
        while let Some(Ok(msg)) = self.ws.next().await {
            if matches!(msg, Message::Close(_)) {
                break;
            }
        }
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// Serves `behavior` until the gateway hangs up. Returns the number of
/// requests answered; a scripted crash surfaces as
/// [`EngineClientError::Crashed`] with the socket dropped uncleanly.
pub async fn run_mock_engine(
    behavior: MockBehavior,
    descriptor: EngineDescriptor,
    gateway_url: &str,
) -> Result<u64, EngineClientError> {
    let mut conn = EngineConnection::connect(gateway_url, descriptor).await?;
    let mut mock = MockEngine::new(behavior);
    while let Some(request) = conn.next_request().await? {
        let started = Instant::now();
        match mock.respond(&request) {
            MockOutcome::Reply { mut reply, delay } => {
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                }
                reply.engine_ms = started.elapsed().as_secs_f64() * 1e3;
                conn.send_reply(&reply).await?;
            }
            MockOutcome::Crash => {
                warn!(served = mock.served(), "scripted crash");
                return Err(EngineClientError::Crashed {
                    served: mock.served(),
                });
            }
            MockOutcome::Hang => {
                warn!(served = mock.served(), "scripted hang");
                conn.idle().await;
                break;
            }
        }
    }
    Ok(mock.served())
}
