"""
Description: This file contains the functions to create the run report as pdf.
"""
import os
import json
import logging

from fpdf import FPDF

logger = logging.getLogger(__name__)


def _section(pdf, title):
    pdf.set_font('Arial', 'B', 14)
    pdf.cell(0, 10, title, ln=True)
    pdf.set_font('Arial', '', 12)


def _format(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def create_pdf_from_json_and_plots(json_file, plot_files, filename='report.pdf'):
    """
    Creates a PDF run report from a JSON report and plot images.

    Parameters:
    - json_file (str): Path to the JSON report written by the run command.
    - plot_files (list): List of paths to plot image files to include in the PDF.
    - filename (str): The filename for the generated PDF.

    Returns:
    - str: The filename.
    """
    with open(json_file, 'r') as file:
        data = json.load(file)

    pdf = FPDF()
    pdf.set_auto_page_break(auto=True, margin=15)
    pdf.add_page()

    pdf.set_font('Arial', 'B', 16)
    pdf.cell(0, 10, f"Run Report: {data.get('system', '')}", ln=True, align='C')
    pdf.ln(10)

    _section(pdf, 'Overall verdict:')
    pdf.cell(0, 10, 'PASS' if data.get('passed') else 'FAIL', ln=True)
    pdf.ln(5)

    for title, key in (('Bounds:', 'bounds'), ('Quantization:', 'quantization')):
        if key in data:
            _section(pdf, title)
            for name, value in data[key].items():
                pdf.cell(0, 8, f"  {name}: {_format(value)}", ln=True)
            pdf.ln(5)

    verdict = data.get('verdict')
    if verdict:
        _section(pdf, f"Phases (delay {verdict.get('delay', '')}):")
        for phase in verdict['phases']:
            status = 'PASS' if phase['passed'] else 'FAIL'
            pdf.cell(0, 8, f"  Phase {phase['index']} ({phase['mode']}): {status}, "
                           f"entered {_format(phase['entered_at'])} s, completed {_format(phase['completed_at'])} s",
                     ln=True)
        pdf.cell(0, 8, f"  Invariant held: {verdict['invariant_held']}", ln=True)
        pdf.ln(5)

    extra = data.get('random_delays', [])
    if extra:
        _section(pdf, 'Random admissible delays:')
        passed = sum(1 for run in extra if all(phase['passed'] for phase in run['phases']) and run['invariant_held'])
        pdf.cell(0, 8, f"  {passed} of {len(extra)} runs passed", ln=True)

    for plot_file in plot_files:
        if os.path.exists(plot_file):
            pdf.add_page()
            pdf.image(plot_file, x=10, y=20, w=pdf.w - 20)
            pdf.ln(10)
        else:
            logger.warning("%s does not exist and will be skipped.", plot_file)

    pdf.output(filename)
    return filename
