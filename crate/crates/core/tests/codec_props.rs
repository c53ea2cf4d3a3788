use bytes::{Bytes, BytesMut};
use proptest::prelude::*;
use tokio_util::codec::{Decoder, Encoder};

use spanmq_core::codec::{
    decode_packet, encode_packet, Ack, BpduPayload, Connack, Connect, Disconnect, MqttCodec,
    Packet, ProtocolVersion, Publish, QoS, Subscribe, SubscribeFilter, Suback, Will,
};
use spanmq_core::BrokerId;

fn version() -> impl Strategy<Value = ProtocolVersion> {
    prop_oneof![Just(ProtocolVersion::V311), Just(ProtocolVersion::V5)]
}

fn qos() -> impl Strategy<Value = QoS> {
    prop_oneof![Just(QoS::AtMostOnce), Just(QoS::AtLeastOnce), Just(QoS::ExactlyOnce)]
}

fn topic() -> impl Strategy<Value = String> {
    "[a-z0-9/$ _.-]{0,40}"
}

fn filter() -> impl Strategy<Value = String> {
    prop_oneof!["[a-z0-9/]{1,20}", "[a-z]{1,5}/\\+/[a-z]{1,5}", "([a-z]{1,5}/)?#"]
}

fn bytes(max: usize) -> impl Strategy<Value = Bytes> {
    proptest::collection::vec(any::<u8>(), 0..max).prop_map(Bytes::from)
}

fn props(v: ProtocolVersion) -> BoxedStrategy<Bytes> {
    match v {
        ProtocolVersion::V311 => Just(Bytes::new()).boxed(),
        ProtocolVersion::V5 => bytes(24).boxed(),
    }
}

fn broker_id() -> impl Strategy<Value = BrokerId> {
    (any::<u32>(), any::<u16>()).prop_map(|(ip, port)| BrokerId::new(ip.into(), port))
}

fn bpdu() -> impl Strategy<Value = BpduPayload> {
    (
        broker_id(),
        any::<u64>(),
        broker_id(),
        any::<u64>(),
        any::<u32>(),
        any::<bool>(),
        any::<bool>(),
        any::<u16>(),
    )
        .prop_map(|(r, rc, s, sc, cost, tc, rl, epoch)| BpduPayload {
            root_id: r,
            root_capability: rc,
            sender_id: s,
            sender_capability: sc,
            root_path_cost_us: cost,
            topology_change: tc,
            root_link: rl,
            epoch,
        })
}

fn ack(v: ProtocolVersion) -> impl Strategy<Value = Ack> {
    let reason = match v {
        ProtocolVersion::V311 => Just(0u8).boxed(),
        ProtocolVersion::V5 => any::<u8>().boxed(),
    };
    (1u16.., reason, props(v)).prop_map(|(id, reason, properties)| Ack {
        packet_id: id,
        reason,
        properties,
    })
}

fn publish(v: ProtocolVersion) -> impl Strategy<Value = Publish> {
    (qos(), any::<bool>(), any::<bool>(), topic(), 1u16.., bytes(300), props(v)).prop_map(
        |(qos, dup, retain, topic, id, payload, properties)| {
            let zero = qos == QoS::AtMostOnce;
            Publish {
                dup: dup && !zero,
                qos,
                retain,
                topic,
                packet_id: (!zero).then_some(id),
                payload,
                properties,
            }
        },
    )
}

fn connect(v: ProtocolVersion) -> impl Strategy<Value = Connect> {
    let will = proptest::option::of(
        ("[a-z/]{1,20}", bytes(40), qos(), any::<bool>(), props(v)).prop_map(
            |(topic, payload, qos, retain, properties)| Will {
                topic,
                payload,
                qos,
                retain,
                properties,
            },
        ),
    );
    (
        any::<bool>(),
        any::<bool>(),
        any::<u16>(),
        "[A-Za-z0-9:./-]{0,30}",
        will,
        proptest::option::of("[a-z]{0,10}"),
        proptest::option::of(bytes(16)),
        props(v),
    )
        .prop_map(move |(broker, clean_start, keep_alive, client_id, will, username, password, properties)| {
            let password = if v == ProtocolVersion::V311 && username.is_none() {
                None
            } else {
                password
            };
            Connect {
                version: v,
                broker,
                clean_start,
                keep_alive,
                client_id,
                will,
                username,
                password,
                properties,
            }
        })
}

fn packet() -> impl Strategy<Value = (ProtocolVersion, Packet)> {
    version().prop_flat_map(|v| {
        let opts = match v {
            ProtocolVersion::V311 => Just(0u8).boxed(),
            ProtocolVersion::V5 => (0u8..16).prop_map(|o| o << 2).boxed(),
        };
        let sub = proptest::collection::vec((filter(), qos(), opts), 1..5).prop_map(|fs| {
            fs.into_iter()
                .map(|(f, q, o)| SubscribeFilter {
                    options: o,
                    ..SubscribeFilter::new(f, q)
                })
                .collect::<Vec<_>>()
        });
        let disconnect = match v {
            ProtocolVersion::V311 => Just(Disconnect::default()).boxed(),
            ProtocolVersion::V5 => (any::<u8>(), bytes(10))
                .prop_map(|(reason, properties)| Disconnect { reason, properties })
                .boxed(),
        };
        let p = prop_oneof![
            connect(v).prop_map(Packet::Connect),
            (any::<bool>(), any::<u8>(), props(v)).prop_map(|(sp, code, properties)| {
                Packet::Connack(Connack {
                    session_present: sp,
                    code,
                    properties,
                })
            }),
            publish(v).prop_map(Packet::Publish),
            ack(v).prop_map(Packet::Puback),
            ack(v).prop_map(Packet::Pubrec),
            ack(v).prop_map(Packet::Pubrel),
            ack(v).prop_map(Packet::Pubcomp),
            (1u16.., sub, props(v)).prop_map(|(packet_id, filters, properties)| {
                Packet::Subscribe(Subscribe {
                    packet_id,
                    filters,
                    properties,
                })
            }),
            (1u16.., proptest::collection::vec(prop_oneof![Just(0u8), Just(1), Just(2), Just(0x80)], 1..5), props(v))
                .prop_map(|(packet_id, codes, properties)| Packet::Suback(Suback {
                    packet_id,
                    codes,
                    properties,
                })),
            proptest::option::of(bpdu()).prop_map(Packet::Pingreq),
            Just(Packet::Pingresp),
            disconnect.prop_map(Packet::Disconnect),
        ];
        p.prop_map(move |p| (v, p))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn encode_decode_round_trip((v, p) in packet()) {
        let wire = encode_packet(&p, v).unwrap();
        let back = decode_packet(&wire, v).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(encode_packet(&back, v).unwrap(), wire);
    }

    #[test]
    fn stream_decoder_reassembles_any_split(
        items in proptest::collection::vec(packet(), 1..6),
        cut in any::<prop::sample::Index>(),
    ) {
        let mut wire = BytesMut::new();
        let mut expected = Vec::new();
        for (v, p) in items {
            // A single stream speaks one version, CONNECT aside.
            let mut codec = MqttCodec::new(ProtocolVersion::V5);
            if v == ProtocolVersion::V5 {
                codec.encode(p.clone(), &mut wire).unwrap();
                expected.push(p);
            }
        }
        let split = cut.index(wire.len() + 1);
        let mut codec = MqttCodec::new(ProtocolVersion::V5);
        let mut buf = BytesMut::from(&wire[..split]);
        let mut got = Vec::new();
        while let Some(p) = codec.decode(&mut buf).unwrap() {
            got.push(p);
        }
        buf.extend_from_slice(&wire[split..]);
        while let Some(p) = codec.decode(&mut buf).unwrap() {
            got.push(p);
        }
        prop_assert!(buf.is_empty());
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn bpdu_is_fixed_size(b in bpdu()) {
        prop_assert_eq!(b.to_bytes().len(), 36);
        prop_assert_eq!(BpduPayload::decode(&b.to_bytes()).unwrap(), b);
        let wire = encode_packet(&Packet::Pingreq(Some(b)), ProtocolVersion::V311).unwrap();
        prop_assert_eq!(wire.len(), 38);
    }

    #[test]
    fn truncation_is_never_a_complete_packet((v, p) in packet(), cut in any::<prop::sample::Index>()) {
        let wire = encode_packet(&p, v).unwrap();
        let n = cut.index(wire.len());
        let mut codec = MqttCodec::new(v);
        let mut buf = BytesMut::from(&wire[..n]);
        prop_assert!(matches!(codec.decode(&mut buf), Ok(None)));
    }
}
