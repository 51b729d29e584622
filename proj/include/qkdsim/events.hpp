#pragma once

#include "qkdsim/errors.hpp"
#include "qkdsim/time.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace qkdsim {

using NodeId = std::uint32_t;

struct EventHandle
{
    std::uint64_t sequence = 0;
};

template <class Message>
struct Event
{
    SimTime fire_at;
    NodeId target = 0;
    Message payload;
    std::uint64_t sequence = 0;
};

struct SimulationReport
{
    std::uint64_t events_processed = 0;
    SimTime final_time;
    std::vector<std::uint64_t> deliveries_per_node;
    std::vector<std::uint64_t> detections_per_node;
    // FNV-1a digest over (fire_at, target, sequence) of every delivered event
    std::uint64_t trace_digest = 0xcbf29ce484222325ULL;

    bool operator==(const SimulationReport&) const = default;
};

/// Sequential discrete-event engine.
///
/// Events are delivered in (fire_at, sequence) order, where sequence is a
/// global counter incremented by every schedule call, so simultaneous events
/// fire in the order they were scheduled. Handlers may schedule further events
/// at or after the current clock. Not thread-safe; run independent instances
/// for parallel work.
template <class Message>
class Simulator
{
public:
    using EventType = Event<Message>;
    using Handler = std::function<void(Simulator&, const EventType&)>;

    NodeId add_node(std::string name, Handler handler = {})
    {
        nodes_.push_back(Node{std::move(name), std::move(handler)});
        report_.deliveries_per_node.push_back(0);
        report_.detections_per_node.push_back(0);
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void set_handler(NodeId node, Handler handler) { node_at(node).handler = std::move(handler); }

    const std::string& node_name(NodeId node) const { return node_at(node).name; }
    std::size_t node_count() const { return nodes_.size(); }
    SimTime now() const { return now_; }
    std::size_t pending() const { return heap_.size() - cancelled_.size(); }

    EventHandle schedule(SimTime fire_at, NodeId target, Message payload)
    {
        if (fire_at < now_) {
            throw CausalityError("event at " + std::to_string(fire_at.ps) + " ps scheduled when clock is " +
                                 std::to_string(now_.ps) + " ps");
        }
        node_at(target);
        const std::uint64_t seq = next_sequence_++;
        heap_.push_back(EventType{fire_at, target, std::move(payload), seq});
        std::push_heap(heap_.begin(), heap_.end(), later);
        return EventHandle{seq};
    }

    EventHandle schedule_in(SimTime delay, NodeId target, Message payload)
    {
        return schedule(now_ + delay, target, std::move(payload));
    }

    /// Cancels a pending event. Returns false if it already fired or is unknown.
    bool cancel(EventHandle handle)
    {
        const bool queued = std::any_of(heap_.begin(), heap_.end(),
                                        [&](const EventType& e) { return e.sequence == handle.sequence; });
        return queued && cancelled_.insert(handle.sequence).second;
    }

    /// Bidirectional link with a fixed one-way propagation delay.
    void connect(NodeId a, NodeId b, SimTime delay)
    {
        node_at(a);
        node_at(b);
        if (delay < SimTime::zero()) {
            throw ConfigError("link", "negative propagation delay");
        }
        links_[std::minmax(a, b)] = delay;
    }

    std::optional<SimTime> link_delay(NodeId a, NodeId b) const
    {
        auto it = links_.find(std::minmax(a, b));
        if (it == links_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    /// Delivers `payload` to `to` after the configured link delay.
    EventHandle send_classical(NodeId from, NodeId to, Message payload)
    {
        auto delay = link_delay(from, to);
        if (!delay) {
            throw ConfigError("link", "no link between '" + node_name(from) + "' and '" + node_name(to) + "'");
        }
        return schedule(now_ + *delay, to, std::move(payload));
    }

    void record_detection(NodeId node)
    {
        node_at(node);
        ++report_.detections_per_node[node];
    }

    SimulationReport run_until(SimTime horizon)
    {
        if (nodes_.empty()) {
            throw ConfigError("nodes", "simulation has no nodes");
        }
        while (!heap_.empty() && heap_.front().fire_at <= horizon) {
            std::pop_heap(heap_.begin(), heap_.end(), later);
            EventType ev = std::move(heap_.back());
            heap_.pop_back();
            if (auto it = cancelled_.find(ev.sequence); it != cancelled_.end()) {
                cancelled_.erase(it);
                continue;
            }
            now_ = ev.fire_at;
            ++report_.events_processed;
            ++report_.deliveries_per_node[ev.target];
            digest(ev);
            if (const auto& handler = nodes_[ev.target].handler) {
                handler(*this, ev);
            }
        }
        if (pending() > 0 && horizon > now_) {
            now_ = horizon;
        }
        report_.final_time = now_;
        return report_;
    }

private:
    struct Node
    {
        std::string name;
        Handler handler;
    };

    static bool later(const EventType& a, const EventType& b)
    {
        if (a.fire_at != b.fire_at) {
            return a.fire_at > b.fire_at;
        }
        return a.sequence > b.sequence;
    }

    Node& node_at(NodeId id)
    {
        if (id >= nodes_.size()) {
            throw ConfigError("node", "unknown node id " + std::to_string(id));
        }
        return nodes_[id];
    }
    const Node& node_at(NodeId id) const { return const_cast<Simulator*>(this)->node_at(id); }

    void digest(const EventType& ev)
    {
        auto mix = [this](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) {
                report_.trace_digest ^= (v >> (8 * i)) & 0xffU;
                report_.trace_digest *= 0x100000001b3ULL;
            }
        };
        mix(static_cast<std::uint64_t>(ev.fire_at.ps));
        mix(ev.target);
        mix(ev.sequence);
    }

    std::vector<Node> nodes_;
    std::vector<EventType> heap_;
    std::unordered_set<std::uint64_t> cancelled_;
    std::map<std::pair<NodeId, NodeId>, SimTime> links_;
    std::uint64_t next_sequence_ = 0;
    SimTime now_;
    SimulationReport report_;
};

} // namespace qkdsim
