"""
Graph and plot generator for symbolic models, strategies and closed-loop trajectories.
"""
import matplotlib
matplotlib.use('Agg')

import matplotlib.pyplot as plt
import networkx as nx
import numpy as np


def create_model_graph(model):
    """@brief creates a graph of a symbolic model, one edge per (state, successor) with its labels"""
    model_graph = nx.DiGraph()
    for q in range(model.num_states):
        model_graph.add_node(q, initial=(q == model.initial), frontier=(q in model.frontier))
    for (q, a, b), targets in model.transitions.items():
        for p in targets:
            if model_graph.has_edge(q, p):
                model_graph[q][p]['controls'].add(a)
                model_graph[q][p]['disturbances'].add(b)
            else:
                model_graph.add_edge(q, p, controls={a}, disturbances={b})
    return model_graph


def create_strategy_graph(strategy):
    """@brief closed-loop product graph of a strategy, labelled by the chosen input"""
    strategy_graph = nx.DiGraph()
    if strategy.graph is None:
        return strategy_graph
    for node, data in strategy.graph.nodes(data=True):
        label = data.get('label')
        value = None if label is None else getattr(strategy.controls[label], 'value', strategy.controls[label])
        strategy_graph.add_node(node, control=value)
    strategy_graph.add_edges_from(strategy.graph.edges())
    return strategy_graph


def draw_graph(graph, save_path):
    """@brief draws a graph to a file"""
    fig, ax = plt.subplots(figsize=(10, 10))
    layout = nx.spring_layout(graph, seed=0)
    nx.draw(graph, pos=layout, ax=ax, node_size=30, arrowsize=6, with_labels=len(graph) <= 40)
    fig.savefig(save_path)
    plt.close(fig)
    return save_path


def plot_trajectory(trajectory, spec=None, title='Closed-loop trajectory', save_path=None):
    """
    Plots states with the target regions of a specification, the applied input and the delay.

    Parameters:
    - trajectory (Trajectory): Dense trajectory.
    - spec (PhaseSpec): Optional specification; finite box bounds are drawn per coordinate.
    - title (str): The title of the figure.
    - save_path (str): Where to save the figure.
    """
    n = trajectory.states.shape[1]
    fig, axes = plt.subplots(n + 2, 1, figsize=(10, 3 * (n + 2)), sharex=True)
    for i in range(n):
        axes[i].plot(trajectory.times, trajectory.states[:, i], label=f"x{i + 1}")
        if spec is not None:
            for index, phase in enumerate(spec.phases):
                for low, high in zip(phase.target.lows[:, i], phase.target.highs[:, i]):
                    for bound in (low, high):
                        if np.isfinite(bound):
                            axes[i].axhline(bound, linestyle='--', color=f"C{index + 1}", linewidth=0.8)
        axes[i].legend(loc='upper right')
    for j in range(trajectory.inputs.shape[1]):
        axes[n].step(trajectory.times, trajectory.inputs[:, j], where='post', label=f"u{j + 1}")
    axes[n].legend(loc='upper right')
    axes[n + 1].plot(trajectory.times, trajectory.delays, label="delay")
    axes[n + 1].set_xlabel("time [s]")
    axes[n + 1].legend(loc='upper right')
    axes[0].set_title(title)
    if save_path:
        fig.savefig(save_path)
    plt.close(fig)
    return save_path
