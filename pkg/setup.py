import os
import sys

from setuptools import setup, find_packages

assert sys.version_info[0] == 3
__version__ = None
with open(os.path.join('.', 'pygeotherm', '__init__.py')) as f:
    for line in f:
        if line.startswith('__version__'):
            delim = '"' if '"' in line else "'"
            __version__ = line.split(delim)[1]
assert __version__ is not None, 'Unable to determine version'
# 'dev' is not a PEP 440 version, which current setuptools rejects
if __version__ == 'dev':
    __version__ = '0.0.dev0'

core_requires = [
    'redo==2.0.4',
    'numpy>=1.22',
    # sparse.linalg.bicgstab takes 'rtol' starting from 1.12
    'scipy>=1.12',
    'pandas>=1.4',
    'PyYAML>=6.0',
]

# Only needed for the plot images; imported lazily
plot_requires = [
    'matplotlib>=3.5',
]

setup(
    name='pygeotherm',
    version=__version__,
    packages=find_packages(exclude=['test']),
    license='MIT License',
    description='Geothermal reservoir simulation with exponential Rosenbrock, Rosenbrock and theta time integrators',
    long_description=open("README.md", "r").read(),
    long_description_content_type="text/markdown",
    keywords="geothermal reservoir simulation exponential integrator krylov leja rosenbrock finite volume",
    python_requires='>=3.8',
    install_requires=core_requires + plot_requires,
    entry_points={
        'console_scripts': [
            'pygeotherm=pygeotherm._src.cli:main',
        ],
    },
    extras_require={
        'test': [
            'pytest',
            'pytest-cov',
            'flake8',
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Physics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
