"""
Budgeted feature-group selection: maximize total importance subject to
cost(S) <= c_max, where cost(S) pays each producing node once.

Groups that share costed producing nodes form components. Every subset of a
component is enumerated with its true deduplicated cost, then the components
are combined by a sparse 0/1 knapsack over reachable (cost, importance)
states with dominance pruning. Without shared nodes this is the classic
knapsack over group costs.
"""

import itertools
import logging

import networkx as nx

logger = logging.getLogger(__name__)

MAX_COMPONENT_SIZE = 16


def _components(groups, cost_table):
    """
    Groups linked through a shared producing node of positive cost, as lists
    of groups in id order.
    """
    links = nx.Graph()
    links.add_nodes_from(g.id for g in groups)
    owner = {}
    for group in groups:
        for node in sorted(group.producing_nodes):
            if cost_table.node_costs.get(node, 0.0) <= 0:
                continue
            if node in owner:
                links.add_edge(owner[node], group.id)
            else:
                owner[node] = group.id

    by_id = {g.id: g for g in groups}
    components = sorted(sorted(ids) for ids in nx.connected_components(links))
    return [[by_id[i] for i in ids] for ids in components]


def _options(component, cost_table, value):
    """
    (cost, importance, ids) choices for one component, the empty choice first.
    """
    if len(component) > MAX_COMPONENT_SIZE:
        logger.warning("component of %d groups: using standalone group costs", len(component))
        options = [(0.0, 0.0, ())]
        for group in component:
            options = options + [(c + group.cost_us, v + value[group.id], ids + (group.id,))
                                  for c, v, ids in options]
            options = _pareto(options, float("inf"))
        return options

    options = []
    for r in range(len(component) + 1):
        for subset in itertools.combinations(component, r):
            ids = tuple(g.id for g in subset)
            options.append((cost_table.cost_of(ids), sum(value[i] for i in ids), ids))
    return options


def _pareto(states, c_max):
    """
    Keep affordable states whose importance beats every cheaper state.
    Equal importance goes to the cheaper state.
    """
    front = []
    for state in sorted((s for s in states if s[0] <= c_max), key=lambda s: (s[0], -s[1])):
        if not front or state[1] > front[-1][1]:
            front.append(state)
    return front


def select_feature_groups(groups, c_max, cost_table):
    """
    Ids of the groups to compute for an approximate model under budget c_max
    (microseconds per row). Negative importances count as zero.
    """
    if c_max < 0:
        raise ValueError("c_max must be >= 0, got {}".format(c_max))
    if not groups:
        return frozenset()
    if c_max >= cost_table.full_cost_us:
        return frozenset(g.id for g in groups)

    value = {g.id: max(0.0, float(g.importance)) for g in groups}
    states = [(0.0, 0.0, ())]
    for component in _components(groups, cost_table):
        options = _options(component, cost_table, value)
        states = _pareto([(c + oc, v + ov, ids + oids)
                          for c, v, ids in states
                          for oc, ov, oids in options], c_max)

    cost, importance, ids = states[-1]
    logger.debug("c_max %.2f: selected %s (cost %.2f, importance %.4f)",
                 c_max, sorted(ids), cost, importance)
    return frozenset(ids)
