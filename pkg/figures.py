import logging
from typing import Dict, Optional, Sequence

import pandas as pd
import plotly.graph_objs as go

from data_management import DataManager
from energy_grid import CoincidenceMap, Spectrum1D


class FigureBuilder:
    def __init__(self, data_manager: DataManager):
        self.data_manager = data_manager

    def create_map_chart(self, coincidence: CoincidenceMap, title: str, diverging: bool = False) -> go.Figure:
        logging.info(f"Creating map chart: {title}")
        energies = coincidence.grid.energies
        fig = go.Figure()
        fig.add_trace(go.Heatmap(
            x=energies,
            y=energies,
            z=coincidence.values,
            colorscale='RdBu' if diverging else 'Viridis',
            zmid=0 if diverging else None,
            hovertemplate='E1=%{y:.3f} eV<br>E2=%{x:.3f} eV<br>P=%{z:.4g}<extra></extra>'
        ))
        fig.update_layout(
            title=title,
            xaxis_title='E2 (eV)',
            yaxis_title='E1 (eV)',
            yaxis_scaleanchor='x'
        )
        return fig

    def create_spectrum_chart(self, spectra: Dict[str, Spectrum1D], title: str) -> go.Figure:
        logging.info(f"Creating spectrum chart: {title}")
        fig = go.Figure()
        for name, spectrum in spectra.items():
            fig.add_trace(go.Scatter(
                x=spectrum.grid.energies,
                y=spectrum.values,
                name=name,
                mode='lines'
            ))
        fig.update_layout(
            title=title,
            xaxis_title='Energy (eV)',
            yaxis_title='Probability density (1/eV)',
            hovermode='x unified'
        )
        return fig

    def create_gas_chart(self, frame: pd.DataFrame, title: str = 'Electron gas') -> go.Figure:
        logging.info("Creating gas diagnostics chart")
        fig = go.Figure()
        fig.add_trace(go.Scatter(x=frame['time_fs'], y=frame['width_fwhm_ev'], name='FWHM width', mode='lines'))
        fig.add_trace(go.Scatter(x=frame['time_fs'], y=frame['width_iqr_ev'], name='IQR width', mode='lines'))
        fig.add_trace(go.Scatter(x=frame['time_fs'], y=frame['median_nn_nm'], name='Median NN distance',
                                 mode='lines', line=dict(dash='dash'), yaxis='y2'))
        fig.update_layout(
            title=title,
            xaxis_title='Time (fs)',
            yaxis_title='Spectral width (eV)',
            yaxis2=dict(title='Distance (nm)', overlaying='y', side='right')
        )
        return fig

    def create_fit_chart(self, frame: pd.DataFrame) -> go.Figure:
        fig = go.Figure()
        fig.add_trace(go.Bar(
            x=frame['parameter'],
            y=frame['value'],
            error_y=dict(type='data', array=frame['error_2sigma']),
            text=[f"{value:.3g}" for value in frame['value']],
            textposition='auto'
        ))
        fig.update_layout(title='Fitted parameters (2 sigma errors)', xaxis_title='Parameter', yaxis_title='Value')
        return fig

    def save(self, fig: go.Figure, name: str, parameters: Optional[Dict] = None) -> str:
        path = self.data_manager.path(name)
        fig.write_html(path, include_plotlyjs='cdn')
        self.data_manager.record_output(name, parameters)
        return path

    def save_maps(self, maps: Sequence[CoincidenceMap], names: Sequence[str], diverging: bool = False):
        for coincidence, name in zip(maps, names):
            self.save(self.create_map_chart(coincidence, name, diverging), f"{name}.html")
