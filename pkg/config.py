#!/usr/bin/env python3
"""
Sistema de Configuração para o simulador QKD BB84

Gerencia configurações do simulador através de arquivo INI (padrões do enlace,
da simulação, do protocolo e do canal clássico) e lê arquivos de execução no
formato plano chave=valor que espelham as opções da linha de comando.
"""

import configparser
import os
import logging
from typing import Any, Dict, Optional, Tuple

DEFAULT_CONFIG_FILE = 'qkd_sim_config.ini'


class ConfigError(ValueError):
    """Erro de configuração (valor inválido, chave desconhecida, combinação proibida)"""


class Config:
    """Classe para gerenciar configurações do simulador"""

    def __init__(self, config_file: str = DEFAULT_CONFIG_FILE):
        self.config = configparser.ConfigParser()
        self.config_file = config_file
        self.load_config()

    def load_config(self) -> None:
        """Carrega configurações do arquivo ou grava um arquivo com as configurações padrão"""
        self.create_default_config()
        if os.path.exists(self.config_file):
            try:
                self.config.read(self.config_file, encoding='utf-8')
                logging.getLogger('qkd_sim').info(f"Configurações carregadas de {self.config_file}")
            except configparser.Error as e:
                logging.getLogger('qkd_sim').warning(f"Erro ao carregar configurações: {e}. Usando padrões.")
                self.create_default_config()
        else:
            self.save_config()
            logging.getLogger('qkd_sim').info("Configurações padrão criadas")

    def create_default_config(self) -> None:
        """Cria configurações padrão (parâmetros medidos do enlace de 122 km)"""
        self.config.clear()
        self.config['LINK'] = {
            'mu': '0.1',
            'alpha': '0.21',
            'length_km': '122',
            'eta_bob': '0.045',
            'pe': '8.5e-7',
            'dark': '3.2e-7',
            'emod': '0.033',
            'clock_hz': '2e6',
            'gate_ns': '3.5',
            'signal_fraction': '0.384615',
            'wavelength_m': '1.55e-6'
        }

        self.config['SIMULATION'] = {
            'sim_mode': 'aggregate',
            'duration_s': '120',
            'noise_sifting': 'two_output',
            'drift': 'false',
            'interferometer_visibility': '1.0'
        }

        self.config['PROTOCOL'] = {
            'version': '1',
            'sample_fraction': '0.1',
            'sample_floor': '200',
            'qber_threshold': '0.11',
            'safety_bits': '30',
            'unconditional': 'false'
        }

        self.config['CASCADE'] = {
            'n_passes': '4',
            'k1_constant': '0.73',
            'verify_bits': '50'
        }

        self.config['WIRE'] = {
            'timeout_s': '30',
            'max_payload': str(1 << 24)
        }

        self.config['LOGGING'] = {
            'level': 'INFO',
            'console_level': 'WARNING',
            'dir': 'logs'
        }

    def save_config(self) -> None:
        """Salva configurações no arquivo"""
        try:
            with open(self.config_file, 'w', encoding='utf-8') as f:
                self.config.write(f)
            logging.getLogger('qkd_sim').info(f"Configurações salvas em {self.config_file}")
        except OSError as e:
            logging.getLogger('qkd_sim').error(f"Erro ao salvar configurações: {e}")

    def get(self, section: str, key: str, fallback: Any = None) -> str:
        """Obtém valor de configuração"""
        try:
            return self.config.get(section, key, fallback=str(fallback) if fallback is not None else "")
        except (configparser.NoSectionError, configparser.NoOptionError):
            return str(fallback) if fallback is not None else ""

    def getint(self, section: str, key: str, fallback: int = 0) -> int:
        """Obtém valor inteiro de configuração"""
        try:
            return self.config.getint(section, key, fallback=fallback)
        except (configparser.NoSectionError, configparser.NoOptionError, ValueError):
            return fallback

    def getfloat(self, section: str, key: str, fallback: float = 0.0) -> float:
        """Obtém valor float de configuração"""
        try:
            return self.config.getfloat(section, key, fallback=fallback)
        except (configparser.NoSectionError, configparser.NoOptionError, ValueError):
            return fallback

    def set(self, section: str, key: str, value: Any) -> None:
        """Define valor de configuração"""
        if not self.config.has_section(section):
            self.config.add_section(section)
        self.config.set(section, key, str(value))

    def get_all_settings(self) -> Dict[str, Dict[str, str]]:
        """Retorna todas as configurações como dicionário"""
        settings = {}
        for section_name in self.config.sections():
            settings[section_name] = dict(self.config[section_name])
        return settings



_app_config: Optional[Config] = None


def get_config() -> Config:
    """Retorna a instância global de configuração (criada sob demanda)"""
    global _app_config
    if _app_config is None:
        _app_config = Config(os.getenv('QKD_SIM_CONFIG', DEFAULT_CONFIG_FILE))
    return _app_config


# Funções de conveniência para acessar configurações comuns
def get_wire_settings(cfg: Optional[Config] = None) -> Tuple[float, int]:
    """Retorna (timeout de leitura em segundos, limite rígido de payload)"""
    cfg = cfg or get_config()
    return cfg.getfloat('WIRE', 'timeout_s', 30.0), cfg.getint('WIRE', 'max_payload', 1 << 24)


def get_log_settings() -> Dict[str, str]:
    """Retorna nível de log, nível do console e diretório de logs"""
    cfg = get_config()
    return {
        'level': cfg.get('LOGGING', 'level', 'INFO'),
        'console_level': cfg.get('LOGGING', 'console_level', 'WARNING'),
        'dir': cfg.get('LOGGING', 'dir', 'logs'),
    }


RUN_FILE_SECTION = 'run'


def load_run_file(path: str) -> Dict[str, str]:
    """
    Lê um arquivo de execução plano (chave=valor, sem seções).

    Linhas vazias e comentários (# ou ;) são ignorados. As chaves espelham as
    opções da linha de comando sem o prefixo '--' e com '_' no lugar de '-'.
    """
    if not os.path.exists(path):
        raise ConfigError(f"Arquivo de configuração não encontrado: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            parser.read_string(f"[{RUN_FILE_SECTION}]\n" + f.read(), source=path)
    except configparser.Error as e:
        raise ConfigError(f"Arquivo de configuração inválido ({path}): {e}") from e
    return {key.replace('-', '_'): value.strip() for key, value in parser[RUN_FILE_SECTION].items()}


if __name__ == "__main__":
    config = get_config()
    print("Configurações atuais:")
    for section, settings in config.get_all_settings().items():
        print(f"\n[{section}]")
        for key, value in settings.items():
            print(f"  {key} = {value}")
