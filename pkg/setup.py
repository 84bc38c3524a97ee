"""
Setup configuration for VadKit
"""

from setuptools import setup, find_packages
from pathlib import Path

# Read the README file
readme_file = Path(__file__).parent / "README.md"
long_description = readme_file.read_text() if readme_file.exists() else ""

setup(
    name='vadkit',
    version='1.0.0',
    description='CNN-BiLSTM voice activity detection toolkit',
    long_description=long_description,
    long_description_content_type='text/markdown',
    author='VadKit Team',
    packages=find_packages(include=['vadkit', 'vadkit.*']),
    package_data={
        'vadkit': ['reference_results.yaml'],
    },
    install_requires=[
        'numpy>=1.22',
        'scipy>=1.8',
        'soundfile>=0.10',
        'PyYAML>=6.0',
    ],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    entry_points={
        'console_scripts': [
            'vadkit=vadkit.cli:main',
        ],
    },
    python_requires='>=3.9',
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'Topic :: Multimedia :: Sound/Audio :: Speech',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Programming Language :: Python :: 3.12',
    ],
)
